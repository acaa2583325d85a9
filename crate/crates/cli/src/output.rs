use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Everything a command can produce. The first present artifact, in field
/// order, is the one printed when no output path is given.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub json: Option<String>,
    pub csv: Option<String>,
    pub svg: Option<String>,
}

impl Artifacts {
    pub fn json<T: Serialize>(report: &T) -> Self {
        Artifacts { json: Some(to_json(report)), ..Default::default() }
    }

    fn by_extension(&self, path: &Path) -> Option<&str> {
        match path.extension()?.to_str()? {
            "json" => self.json.as_deref(),
            "csv" => self.csv.as_deref(),
            "svg" => self.svg.as_deref(),
            _ => None,
        }
    }

    fn primary(&self) -> Option<&str> {
        self.json.as_deref().or(self.csv.as_deref()).or(self.svg.as_deref())
    }
}

pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialise");
    s.push('\n');
    s
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let wrap = |source: io::Error| CliError::Write { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(contents.as_bytes()).map_err(wrap)?;
    tmp.as_file().sync_all().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

/// Resolves every path before writing any of them.
pub fn deliver(paths: &[PathBuf], artifacts: &Artifacts) -> Result<(), CliError> {
    if paths.is_empty() {
        if let Some(text) = artifacts.primary() {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Write { path: PathBuf::from("<stdout>"), source })?;
        }
        return Ok(());
    }
    let mut staged = Vec::with_capacity(paths.len());
    for path in paths {
        if path.as_os_str().is_empty() {
            return Err(CliError::Invalid("empty output path".into()));
        }
        let text = artifacts
            .by_extension(path)
            .ok_or_else(|| CliError::Invalid(format!("this command has no artifact for {}", path.display())))?;
        staged.push((path, text));
    }
    for (path, text) in staged {
        write_atomic(path, text)?;
    }
    Ok(())
}
