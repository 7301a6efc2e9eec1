use std::fs;
use std::path::{Path, PathBuf};

use balancekit::{Error, Result};
use serde::Serialize;

/// An output directory that refuses to write over any of the command's inputs
/// and records what it wrote for the manifest.
pub struct OutputDir {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path, inputs: &[&Path]) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let inputs = inputs
            .iter()
            .filter_map(|p| fs::canonicalize(p).ok())
            .collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs,
            written: Vec::new(),
        })
    }

    /// Path for `name` inside the directory.
    pub fn file(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Ok(existing) = fs::canonicalize(&path) {
            if self.inputs.contains(&existing) {
                return Err(Error::InvalidInput(format!(
                    "refusing to overwrite input file {}; choose another --out",
                    path.display()
                )));
            }
        }
        self.written.push(name.to_owned());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.file(name)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Writes `manifest.json` with the configuration echo, library version,
    /// seeds and the list of files written.
    pub fn finish<C: Serialize, E: Serialize>(
        mut self,
        command: &str,
        config: &C,
        workers: Option<usize>,
        seeds: &[(&str, u64)],
        extra: E,
    ) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a, C, E> {
            command: &'a str,
            version: &'a str,
            config: &'a C,
            workers: Option<usize>,
            seeds: serde_json::Map<String, serde_json::Value>,
            outputs: Vec<String>,
            #[serde(flatten)]
            extra: E,
        }
        let seeds = seeds
            .iter()
            .map(|(k, v)| ((*k).to_owned(), (*v).into()))
            .collect();
        let mut outputs = std::mem::take(&mut self.written);
        outputs.push("manifest.json".into());
        let manifest = Manifest {
            command,
            version: balancekit::VERSION,
            config,
            workers,
            seeds,
            outputs,
            extra,
        };
        self.write_json("manifest.json", &manifest)
    }
}
