use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const RUN_RECORD: &str = "run.json";

/// An output directory whose files were all checked for clobbering before
/// any work started.
pub struct OutputDir {
    dir: PathBuf,
}

impl OutputDir {
    /// Creates `dir` if needed and refuses to proceed when any of `names`
    /// (or the run record) already exists, unless `force` is set.
    pub fn claim(dir: &Path, force: bool, names: &[String]) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Failed(format!("cannot create {}: {e}", dir.display())))?;
        if !force {
            for name in names.iter().map(String::as_str).chain([RUN_RECORD]) {
                let p = dir.join(name);
                if p.exists() {
                    return Err(CliError::Failed(format!(
                        "{} already exists; pass --force to overwrite",
                        p.display()
                    )));
                }
            }
        }
        Ok(OutputDir { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write<F>(&self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.path(name);
        let file =
            File::create(&path).map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }
}
