//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simwise_core::frel::FrelHyper;
use simwise_core::synth::BenchmarkConfig;

use crate::CliError;

pub const ABLATION_GRID: [usize; 5] = [20, 40, 80, 160, 242];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Meta-trained network and head, no adaptation.
    FrozenCnn,
    /// kNN vote over `k_shots` support embeddings per class.
    FselKnn,
    /// Classifier-only fine-tuning on the tune split.
    #[default]
    Frel,
    /// All three.
    All,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::FrozenCnn => "frozen-cnn",
            Baseline::FselKnn => "fsel-knn",
            Baseline::Frel => "frel",
            Baseline::All => "all",
        }
    }

    pub fn expand(self) -> Vec<Baseline> {
        match self {
            Baseline::All => vec![Baseline::FrozenCnn, Baseline::FselKnn, Baseline::Frel],
            b => vec![b],
        }
    }
}

/// Settings of the experiment commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Monitor used by `meta-train`, `tune-eval` and `ablate-subcarriers`.
    pub monitor: u32,
    /// Number of fine-tuning seeds swept by `tune-eval`, starting at `seed`.
    pub seeds: usize,
    pub subcarriers: Vec<usize>,
    /// Required own-minus-cross accuracy gap of `proximity --gate`.
    pub proximity_margin: f64,
    pub gate: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { monitor: 0, seeds: 1, subcarriers: ABLATION_GRID.to_vec(), proximity_margin: 0.10, gate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; when set it replaces `benchmark.seed` and `frel.seed`.
    pub seed: Option<u64>,
    /// Output directory; `SIMWISE_OUT`, then `simwise-out`, when unset.
    pub out_dir: Option<PathBuf>,
    /// Dataset directory; defaults to `<out_dir>/dataset`.
    pub dataset: Option<PathBuf>,
    /// Checkpoint file; defaults to `<out_dir>/checkpoint.swnn`.
    pub checkpoint: Option<PathBuf>,
    pub baseline: Baseline,
    pub jobs: usize,
    pub benchmark: BenchmarkConfig,
    pub frel: FrelHyper,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: None,
            dataset: None,
            checkpoint: None,
            baseline: Baseline::default(),
            jobs: 1,
            benchmark: BenchmarkConfig::default(),
            frel: FrelHyper::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// `SIMWISE_OUT`; used only when neither flag nor file sets `out_dir`.
    pub env_out_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub baseline: Option<Baseline>,
    pub jobs: Option<usize>,
    pub gate: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then `file`, then `overrides`; seeds propagated and every
    /// section validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.finish()
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(p) = o.out_dir.as_ref().or(self.out_dir.as_ref()).or(o.env_out_dir.as_ref()) {
            self.out_dir = Some(p.clone());
        }
        if let Some(p) = &o.dataset {
            self.dataset = Some(p.clone());
        }
        if let Some(p) = &o.checkpoint {
            self.checkpoint = Some(p.clone());
        }
        if let Some(b) = o.baseline {
            self.baseline = b;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        self.experiment.gate |= o.gate;
    }

    pub fn finish(mut self) -> Result<Self, CliError> {
        self.out_dir.get_or_insert_with(|| PathBuf::from("simwise-out"));
        if let Some(s) = self.seed {
            self.benchmark.seed = s;
            self.frel.seed = s;
        }
        self.benchmark.validate().map_err(|e| CliError::Config(format!("[benchmark] {e}")))?;
        self.frel.validate().map_err(|e| CliError::Config(format!("[frel] {e}")))?;
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if self.experiment.seeds == 0 {
            return Err(CliError::Config("[experiment] seeds must be at least 1".into()));
        }
        if self.experiment.subcarriers.is_empty() {
            return Err(CliError::Config("[experiment] subcarriers is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.experiment.proximity_margin) {
            return Err(CliError::Config("[experiment] proximity_margin must lie in [0, 1]".into()));
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> &Path {
        self.out_dir.as_deref().unwrap_or(Path::new("simwise-out"))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out_dir().join("dataset"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir().join("checkpoint.swnn"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
