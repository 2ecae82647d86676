//! Output directory handling. Every file carries the config hash.

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `{:.17e}`, the fixed format used in every CSV.
pub fn f(x: f64) -> String {
    format!("{x:.17e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: Option<f64>,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, value: Option<f64>, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, value, detail: detail.into() }
    }
}

pub struct Output {
    dir: PathBuf,
    pub hash: String,
    pub files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path, hash: String) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), hash, files: Vec::new() })
    }

    pub fn csv(&mut self, name: &str, body: &str) -> std::io::Result<()> {
        let text = format!("# config_sha256={}\n{body}", self.hash);
        self.files.push(name.into());
        fs::write(self.dir.join(name), text)
    }

    pub fn text(&mut self, name: &str, body: &str) -> std::io::Result<()> {
        self.csv(name, body)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> std::io::Result<()> {
        let mut v = serde_json::to_value(value).map_err(std::io::Error::other)?;
        if let Value::Object(m) = &mut v {
            m.insert("config_hash".into(), Value::String(self.hash.clone()));
        } else {
            v = json!({ "config_hash": self.hash, "data": v });
        }
        self.files.push(name.into());
        let mut s = serde_json::to_string_pretty(&v).map_err(std::io::Error::other)?;
        s.push('\n');
        fs::write(self.dir.join(name), s)
    }

    /// Writes `summary.json`.
    pub fn summary(&mut self, verb: &str, checks: &[Check], partial: bool, failure: Option<String>) -> std::io::Result<()> {
        let pass = failure.is_none() && checks.iter().all(|c| c.pass);
        let files = self.files.clone();
        self.json(
            "summary.json",
            &json!({
                "verb": verb,
                "pass": pass,
                "partial": partial,
                "checks": checks,
                "failure": failure,
                "files": files,
            }),
        )
    }
}
