use std::path::{Path, PathBuf};

use lgad_core::TrainingConfig;

use crate::{content_hash, manifest_value, pretty, CliResult};

/// Files written by one command, hashed into `manifest.json` at the end.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        self.track(name)
    }

    /// Records a file some other routine already wrote.
    pub fn track(&mut self, name: &str) -> CliResult<()> {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Records every regular file under `name`, in sorted order.
    pub fn track_dir(&mut self, name: &str) -> CliResult<()> {
        let dir = self.dir.join(name);
        let mut entries: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| format!("{name}/{}", e.file_name().to_string_lossy()))
            .collect();
        entries.sort();
        for e in entries {
            self.track(&e)?;
        }
        Ok(())
    }

    pub fn finish(self, command: &str, cfg: &TrainingConfig) -> CliResult<()> {
        let mut hashes = Vec::with_capacity(self.files.len());
        for f in &self.files {
            let path = self.dir.join(f);
            let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            hashes.push((f.clone(), content_hash(&bytes)));
        }
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, pretty(&manifest_value(command, cfg, &hashes))?)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))
    }
}
