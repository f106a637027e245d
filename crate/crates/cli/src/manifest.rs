use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub version: String,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

/// Tracks every file a command writes so the manifest can list them.
pub struct Outputs {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Outputs {
    pub fn new(command: &str, config: Option<&Path>, seed: u64, dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config_path: config.map(Path::to_path_buf),
                seed,
                output_dir: dir.to_path_buf(),
                version: env!("DARKMATTER_VERSION").to_string(),
                timings: BTreeMap::new(),
                files: Vec::new(),
            },
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.manifest.files.push(name.to_string());
        Ok(())
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.manifest
            .timings
            .insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    /// Writes `manifest.json`; must be the final write of a command.
    pub fn finish(self) -> Result<(), CliError> {
        let path = self.dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
