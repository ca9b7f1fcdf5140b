//! Dataset directory: one CSB1 capture and one label CSV per (phase, monitor)
//! plus `manifest.toml` with the benchmark config, scene hash and file hashes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use simwise_core::csi::{read_csb1, read_labels, write_csb1, write_labels};
use simwise_core::synth::{simulate_recording, BenchmarkConfig, Phase, SimulatedCapture};

use crate::config::hex_digest;
use crate::CliError;

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    /// SHA-256 of the benchmark section as TOML.
    pub scene_hash: String,
    pub monitors: Vec<u32>,
    pub benchmark: BenchmarkConfig,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Reads the capture of `monitor` in `phase`, checking its hash.
    pub fn read_recording(&self, dir: &Path, phase: Phase, monitor: u32) -> Result<SimulatedCapture<f32>, CliError> {
        if !self.monitors.contains(&monitor) {
            return Err(CliError::Data(format!("dataset has no monitor {monitor} (has {:?})", self.monitors)));
        }
        let (capture_name, labels_name) = file_names(phase, monitor);
        let capture_bytes = self.read_checked(dir, &capture_name)?;
        let capture = read_csb1::<f32, _>(&mut capture_bytes.as_slice(), monitor)
            .map_err(|e| CliError::Data(format!("{capture_name}: {e}")))?;
        drop(capture_bytes);
        let label_bytes = self.read_checked(dir, &labels_name)?;
        let labels = read_labels(BufReader::new(label_bytes.as_slice())).map_err(|e| CliError::Data(format!("{labels_name}: {e}")))?;
        Ok(SimulatedCapture { capture, labels })
    }

    fn read_checked(&self, dir: &Path, name: &str) -> Result<Vec<u8>, CliError> {
        let entry = self
            .files
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| CliError::Data(format!("manifest does not list {name}")))?;
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if hex_digest(&bytes) != entry.sha256 {
            return Err(CliError::Data(format!("{} does not match its manifest hash", path.display())));
        }
        Ok(bytes)
    }
}

pub fn file_names(phase: Phase, monitor: u32) -> (String, String) {
    let stem = format!("{}_m{monitor}", phase.name());
    (format!("{stem}.csb1"), format!("{stem}.labels.csv"))
}

pub fn scene_hash(cfg: &BenchmarkConfig) -> String {
    hex_digest(toml::to_string(cfg).expect("benchmark config serializes").as_bytes())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileEntry, CliError> {
    let mut f = BufWriter::new(File::create(dir.join(name))?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(FileEntry { name: name.to_string(), sha256: hex_digest(bytes) })
}

/// Simulates every emitted monitor in both phases and writes the dataset.
pub fn write_dataset(cfg: &BenchmarkConfig, dir: &Path) -> Result<Manifest, CliError> {
    fs::create_dir_all(dir)?;
    let monitors: Vec<u32> =
        if cfg.monitor_ids.is_empty() { (0..cfg.scene.subjects as u32).collect() } else { cfg.monitor_ids.clone() };
    let mut files = Vec::new();
    for &m in &monitors {
        for phase in [Phase::Home, Phase::Target] {
            let sim = simulate_recording::<f32>(cfg, phase, m)?;
            let (capture_name, labels_name) = file_names(phase, m);
            let mut bytes = Vec::new();
            write_csb1(&mut bytes, &sim.capture).map_err(|e| CliError::Data(e.to_string()))?;
            drop(sim.capture);
            files.push(write_file(dir, &capture_name, &bytes)?);
            drop(bytes);
            let mut labels = Vec::new();
            write_labels(&mut labels, &sim.labels).map_err(|e| CliError::Data(e.to_string()))?;
            files.push(write_file(dir, &labels_name, &labels)?);
        }
    }
    let manifest = Manifest { seed: cfg.seed, scene_hash: scene_hash(cfg), monitors, benchmark: cfg.clone(), files };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    write_file(dir, MANIFEST, text.as_bytes())?;
    Ok(manifest)
}
