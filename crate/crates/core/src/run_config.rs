//! File-backed run configuration for the command-line tool.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{DocumentEncoder, ExternalEmbeddings};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EncoderMode {
    #[default]
    Tiny,
    External(PathBuf),
}

impl FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Self::Tiny),
            _ => match s.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(Self::External(PathBuf::from(p))),
                _ => Err(Error::Config(format!("encoder must be tiny or external:<path>, got {s:?}"))),
            },
        }
    }
}

impl TryFrom<String> for EncoderMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EncoderMode> for String {
    fn from(m: EncoderMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tiny => f.write_str("tiny"),
            Self::External(p) => write!(f, "external:{}", p.display()),
        }
    }
}

impl EncoderMode {
    /// The frozen external encoder, if selected. `None` means "initialize a
    /// fresh tiny encoder".
    pub fn load(&self, dim: usize) -> Result<Option<DocumentEncoder>> {
        match self {
            Self::Tiny => Ok(None),
            Self::External(p) => Ok(Some(DocumentEncoder::External(ExternalEmbeddings::load(p, Some(dim))?))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub vocab: Option<PathBuf>,
    /// Corpus used to initialize the occurrence memory.
    pub corpus: Option<PathBuf>,
    /// Occurrence-memory snapshot.
    pub omm: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub update: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub encoder: EncoderMode,
    pub dump_adjacency: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.training.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        crate::codec::atomic_write(path.as_ref(), text.as_bytes())
    }

    /// Fails on the first input file that does not exist.
    pub fn check_inputs(&self) -> Result<()> {
        let external = match &self.encoder {
            EncoderMode::External(p) => Some(p),
            EncoderMode::Tiny => None,
        };
        let inputs = [&self.vocab, &self.corpus, &self.train, &self.test, &self.update];
        for p in inputs.into_iter().flatten().chain(external) {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        Ok(())
    }
}
