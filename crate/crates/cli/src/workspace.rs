//! File-based workspace: stage directories, artifact I/O and per-command
//! manifests holding sha256 digests of everything read and written.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::CliError;

pub const STAGE_DIRS: [&str; 9] = [
    "alerts", "suite", "mappings", "fused", "features", "splits", "models", "reports", "synth",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Workspace {
    pub root: PathBuf,
    pub config: Config,
    pub seed: u64,
}

/// Tracks what one command reads and writes.
pub struct Session<'a> {
    ws: &'a Workspace,
    command: &'static str,
    stage: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Relative paths with forward slashes, sorted.
fn walk_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            io_err(&path, e.into())
        })?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(dir)
                .expect("walk stays under its root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push((rel, entry.path().to_path_buf()));
        }
    }
    Ok(out)
}

impl Workspace {
    /// Loads `--config`, else `alertlab.toml` or `alertlab.json` in the
    /// root, else defaults.
    pub fn open(root: PathBuf, config: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let path = match config {
            Some(p) => Some(root.join(p)),
            None => ["alertlab.toml", "alertlab.json"]
                .iter()
                .map(|n| root.join(n))
                .find(|p| p.is_file()),
        };
        let config = match path {
            Some(p) => {
                let text = fs::read_to_string(&p).map_err(|e| match e.kind() {
                    ErrorKind::NotFound => CliError::MissingFile(p.display().to_string()),
                    _ => io_err(&p, e),
                })?;
                Config::parse(&p, &text)?
            }
            None => Config::default(),
        };
        let seed = seed.or(config.seed).unwrap_or(0);
        Ok(Workspace { root, config, seed })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn session(&self, command: &'static str, stage: &'static str) -> Session<'_> {
        Session {
            ws: self,
            command,
            stage,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn config_sha256(&self) -> String {
        let mut canonical = serde_json::to_vec(&self.config).expect("config serializes");
        canonical.extend_from_slice(format!("\nseed={}", self.seed).as_bytes());
        sha256_hex(&canonical)
    }

    pub fn manifests(&self) -> Result<Vec<(String, StageManifest)>, CliError> {
        let mut out = Vec::new();
        for stage in STAGE_DIRS {
            let dir = self.path(stage);
            if !dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
                let entry = entry.map_err(|e| io_err(&dir, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if let Some(command) = name.strip_suffix(".manifest.json") {
                    let text = fs::read_to_string(entry.path()).map_err(|e| io_err(&entry.path(), e))?;
                    let m: StageManifest = serde_json::from_str(&text).map_err(|e| {
                        CliError::Config(format!("{stage}/{name}: {e}"))
                    })?;
                    out.push((command.to_string(), m));
                }
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    /// Digest of a workspace-relative file or directory, `None` if absent.
    pub fn digest(&self, rel: &str) -> Result<Option<String>, CliError> {
        let path = self.path(rel);
        if path.is_dir() {
            let mut listing = String::new();
            for (name, full) in walk_files(&path)? {
                let bytes = fs::read(&full).map_err(|e| io_err(&full, e))?;
                listing.push_str(&format!("{name}\t{}\n", sha256_hex(&bytes)));
            }
            Ok(Some(sha256_hex(listing.as_bytes())))
        } else {
            match fs::read(&path) {
                Ok(bytes) => Ok(Some(sha256_hex(&bytes))),
                Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
                Err(e) => Err(io_err(&path, e)),
            }
        }
    }

    /// Names of commands whose recorded inputs or outputs no longer match.
    pub fn stale_commands(&self) -> Result<Vec<String>, CliError> {
        let mut stale = Vec::new();
        for (command, m) in self.manifests()? {
            let mut fresh = true;
            for (rel, sha) in m.inputs.iter().chain(&m.outputs) {
                if self.digest(rel)?.as_deref() != Some(sha.as_str()) {
                    fresh = false;
                }
            }
            if !fresh {
                stale.push(command);
            }
        }
        Ok(stale)
    }
}

impl Session<'_> {
    fn read_bytes(&mut self, rel: &str, missing: CliError) -> Result<String, CliError> {
        let path = self.ws.path(rel);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => missing,
            _ => io_err(&path, e),
        })?;
        self.inputs.insert(rel.to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }

    /// Reads an artifact produced by `stage`.
    pub fn artifact(&mut self, stage: &'static str, rel: &str) -> Result<String, CliError> {
        let missing = CliError::MissingStage {
            stage,
            path: rel.to_string(),
        };
        self.read_bytes(rel, missing)
    }

    pub fn artifact_json<T: DeserializeOwned>(&mut self, stage: &'static str, rel: &str) -> Result<T, CliError> {
        let text = self.artifact(stage, rel)?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Core(alertlab::Error::Record {
                line: e.line(),
                message: format!("{rel}: {e}"),
            })
        })
    }

    pub fn artifact_jsonl<T: DeserializeOwned>(&mut self, stage: &'static str, rel: &str) -> Result<Vec<T>, CliError> {
        let text = self.artifact(stage, rel)?;
        parse_jsonl(&text, rel)
    }

    /// Reads a user-supplied input named in the config.
    pub fn input(&mut self, rel: &str) -> Result<String, CliError> {
        self.read_bytes(rel, CliError::MissingFile(rel.to_string()))
    }

    /// Records a source directory as one input.
    pub fn input_dir(&mut self, rel: &str) -> Result<Vec<(String, String)>, CliError> {
        let dir = self.ws.path(rel);
        if !dir.is_dir() {
            return Err(CliError::MissingFile(rel.to_string()));
        }
        let mut files = Vec::new();
        for (name, full) in walk_files(&dir)? {
            let bytes = fs::read(&full).map_err(|e| io_err(&full, e))?;
            files.push((name, String::from_utf8_lossy(&bytes).into_owned()));
        }
        let digest = self.ws.digest(rel)?.expect("directory exists");
        self.inputs.insert(format!("{rel}/"), digest);
        Ok(files)
    }

    /// Writes `<stage>/<name>`, creating the stage directory.
    pub fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let rel = format!("{}/{name}", self.stage);
        let path = self.ws.path(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, content).map_err(|e| io_err(&path, e))?;
        self.outputs.insert(rel, sha256_hex(content.as_bytes()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(name, &text)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<(), CliError> {
        self.write(name, &to_jsonl(items))
    }

    /// Writes the manifest and returns the output paths.
    pub fn finish(self) -> Result<Vec<String>, CliError> {
        let written: Vec<String> = self.outputs.keys().cloned().collect();
        let manifest = StageManifest {
            command: self.command.to_string(),
            seed: self.ws.seed,
            config_sha256: self.ws.config_sha256(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let rel = format!("{}/{}.manifest.json", self.stage, self.command);
        let path = self.ws.path(&rel);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::create_dir_all(self.ws.path(self.stage)).map_err(|e| io_err(&path, e))?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(written)
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, rel: &str) -> Result<Vec<T>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                CliError::Core(alertlab::Error::Record {
                    line: i + 1,
                    message: format!("{rel}: {e}"),
                })
            })
        })
        .collect()
}
