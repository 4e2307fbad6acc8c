//! Shared flags and the optional TOML file they override.

use std::path::{Path, PathBuf};

use chatcbm_core::{GenerationParams, TrainConfig};
use clap::{Args, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Stub,
}

/// Flags every subcommand accepts. Each may also come from the config file
/// under the same name with underscores.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct Common {
    /// Concept bank: `.json` or one concept per line.
    #[arg(long, global = true)]
    pub bank: Option<PathBuf>,
    /// Activation records as JSON lines.
    #[arg(long, global = true)]
    pub activations: Option<PathBuf>,
    /// Image embeddings; switches to cosine activations.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub concept_embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub priors: Option<PathBuf>,
    #[arg(long, global = true)]
    pub probe: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub n_candidates: Option<usize>,
    #[arg(long, global = true)]
    pub k_shots: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Common {
    /// Fills every unset field from `file`.
    fn or(self, file: Common) -> Common {
        Common {
            bank: self.bank.or(file.bank),
            activations: self.activations.or(file.activations),
            embeddings: self.embeddings.or(file.embeddings),
            concept_embeddings: self.concept_embeddings.or(file.concept_embeddings),
            priors: self.priors.or(file.priors),
            probe: self.probe.or(file.probe),
            backend: self.backend.or(file.backend),
            base_url: self.base_url.or(file.base_url),
            model: self.model.or(file.model),
            n_candidates: self.n_candidates.or(file.n_candidates),
            k_shots: self.k_shots.or(file.k_shots),
            seeds: self.seeds.or(file.seeds),
            out: self.out.or(file.out),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    #[serde(flatten)]
    common: Common,
    train: Option<TrainConfig>,
    generation: Option<GenerationParams>,
}

/// Effective settings after merging flags over the config file.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub common: Common,
    pub train: TrainConfig,
    pub generation: GenerationParams,
}

impl Settings {
    pub fn resolve(flags: Common, file: Option<&Path>) -> Result<Self, String> {
        let parsed = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => FileConfig::default(),
        };
        // relative paths in the file are taken relative to the file
        let base = file.and_then(Path::parent).unwrap_or(Path::new(""));
        let mut fc = parsed.common;
        for p in [
            &mut fc.bank,
            &mut fc.activations,
            &mut fc.embeddings,
            &mut fc.concept_embeddings,
            &mut fc.priors,
            &mut fc.probe,
            &mut fc.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(Self {
            common: flags.or(fc),
            train: parsed.train.unwrap_or_default(),
            generation: parsed.generation.unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "bank = \"bank.txt\"\nn_candidates = 5\nk_shots = 1\nseeds = [1, 2]\nbackend = \"stub\"\n\n[train]\nepochs = 3\n",
        )
        .unwrap();
        let flags = Common {
            n_candidates: Some(7),
            ..Common::default()
        };
        let s = Settings::resolve(flags, Some(&path)).unwrap();
        assert_eq!(s.common.n_candidates, Some(7));
        assert_eq!(s.common.k_shots, Some(1));
        assert_eq!(s.common.seeds, Some(vec![1, 2]));
        assert_eq!(s.common.backend, Some(BackendKind::Stub));
        assert_eq!(s.common.bank, Some(dir.path().join("bank.txt")));
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn bad_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "n_candidates = \"many\"").unwrap();
        let err = Settings::resolve(Common::default(), Some(&path)).unwrap_err();
        assert!(err.contains("run.toml"));
    }
}
