use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde_json::{json, Value};

/// Artifact directory. Every file written here carries the config hash.
pub struct OutDir {
    dir: PathBuf,
    hash: String,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path, hash: &str) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), hash: hash.to_string(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn hash(&self) -> Option<&str> {
        Some(&self.hash)
    }

    /// Opens `name` for writing; the caller writes the hash line.
    pub fn file(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.path(name);
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?))
    }

    /// CSV with the hash line, a header and rows of pre-formatted fields.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<()> {
        let mut out = self.file(name)?;
        branchflow::output::write_hash_line(&mut out, Some(&self.hash))?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(header)?;
        for row in rows {
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Pretty JSON with `config_hash` added to top-level objects.
    pub fn json(&mut self, name: &str, mut value: Value) -> anyhow::Result<()> {
        if let Value::Object(map) = &mut value {
            map.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let mut out = self.file(name)?;
        serde_json::to_writer_pretty(&mut out, &value)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    /// `run_info.json`: the only artifact that differs between identical runs.
    pub fn finish(mut self, command: &str, workers: usize) -> anyhow::Result<()> {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let files = std::mem::take(&mut self.written);
        self.json(
            "run_info.json",
            json!({
                "command": command,
                "version": env!("CARGO_PKG_VERSION"),
                "timestamp_unix": stamp,
                "workers": workers,
                "files": files,
            }),
        )
    }
}
