use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Output directory; every file lands by temp-file-and-rename.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        write_atomic(&self.dir.join(name), f)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write_with(name, |w| w.write_all(bytes).map_err(CliError::runtime))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing everything written so far.
    pub fn finish(mut self, command: &str, seed: Option<u64>, config: Value, extra: Value) -> Result<(), CliError> {
        let manifest = json!({
            "tool": "nbs",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "seed": seed,
            "config": config,
            "outputs": self.written.clone(),
            "details": extra,
        });
        self.write_json("manifest.json", &manifest)
    }
}

pub fn write_atomic<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp =
        NamedTempFile::new_in(dir).map_err(|e| CliError::Runtime(format!("cannot write in {}: {e}", dir.display())))?;
    f(tmp.as_file_mut())?;
    tmp.as_file_mut().flush().map_err(CliError::runtime)?;
    tmp.persist(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))
}
