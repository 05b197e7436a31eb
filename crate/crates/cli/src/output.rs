use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ringflow::sim::export::{write_metrics_json, write_trace_csv, MetricsSidecar};
use ringflow::sim::SimOutput;

use crate::config::Config;
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// Provenance block carried by every JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub tool: String,
    pub format_version: u32,
    pub command: String,
    pub config_sha256: String,
    pub model_sha256: String,
    pub config: serde_json::Value,
}

impl Stamp {
    pub fn new(cfg: &Config, command: &str) -> Self {
        Self {
            tool: format!("ringflow {}", env!("CARGO_PKG_VERSION")),
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            config_sha256: cfg.sha256(),
            model_sha256: cfg.model_sha256(),
            config: serde_json::to_value(cfg).expect("config serializes"),
        }
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn open(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        let f = File::create(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(self.path(name))
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let mut w = self.open(name)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(self.path(name))
    }

    /// `<stem>.csv` plus its `<stem>.json` sidecar.
    pub fn run(&self, stem: &str, out: &SimOutput, stamp: &Stamp, write_trace: bool) -> Result<(), CliError> {
        if write_trace {
            write_trace_csv(&out.trace, self.open(&format!("{stem}.csv"))?)?;
        }
        let stamp = serde_json::to_value(stamp).expect("stamp serializes");
        let sidecar = MetricsSidecar::new(&out.trace, &out.metrics, Some(stamp));
        let mut w = self.open(&format!("{stem}.json"))?;
        write_metrics_json(&sidecar, &mut w)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// The effective configuration, loadable with `--config`.
    pub fn config(&self, cfg: &Config) -> Result<PathBuf, CliError> {
        self.text("config.toml", &cfg.to_toml())
    }
}
