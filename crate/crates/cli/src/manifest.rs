//! Per-invocation manifests: enough to replay a command (effective config,
//! seed, config hash) plus what it produced.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::commands::CliError;

pub struct Invocation {
    pub command: &'static str,
    pub config: Value,
    pub seed: Option<u64>,
    pub started_at: String,
}

impl Invocation {
    pub fn config_hash(&self) -> String {
        locmt_core::content_hash(&json!({
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
        }))
    }

    /// Writes `<dir>/<command>-<hash prefix>.manifest.json`.
    pub fn write(&self, dir: &Path, outcome: &Result<Value, CliError>) -> std::io::Result<PathBuf> {
        let hash = self.config_hash();
        let (status, exit_code, result, error) = match outcome {
            Ok(v) => ("ok", 0, v.clone(), Value::Null),
            Err(e) => ("failed", e.exit_code(), Value::Null, Value::String(e.to_string())),
        };
        let doc = json!({
            "tool": "locmt",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config": self.config,
            "config_hash": hash,
            "seed": self.seed,
            "status": status,
            "exit_code": exit_code,
            "error": error,
            "result": result,
            "started_at": self.started_at,
            "finished_at": locmt_core::timestamp(),
        });
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}-{}.manifest.json", self.command, &hash[..16]));
        let text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
