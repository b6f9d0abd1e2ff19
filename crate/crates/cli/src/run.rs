//! Run directories and their manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tmerge_core::pipeline::PipelineConfig;

use crate::error::{CliError, Result};

pub const OUT_ROOT_ENV: &str = "TMERGE_OUT_ROOT";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub created: String,
    pub seed: u64,
    pub config_sources: Vec<String>,
    pub config: PipelineConfig,
    /// Artifacts read by the command, as given on the command line.
    pub inputs: Vec<(String, String)>,
    /// Files written, relative to the run directory.
    pub artifacts: Vec<String>,
    pub stage_timings: Vec<StageTiming>,
}

/// A freshly created output directory. Nothing in it is ever rewritten.
pub struct RunDir {
    pub path: PathBuf,
    artifacts: Vec<String>,
    timings: Vec<StageTiming>,
}

impl RunDir {
    /// Creates `<root>/<name>`, or `<root>/<command>-<timestamp>[-s<seed>]`
    /// with a numeric suffix when that is taken. An explicit `name` that
    /// already exists is an error.
    pub fn create(root: &Path, command: &str, seed: Option<u64>, name: Option<&str>) -> Result<Self> {
        fs::create_dir_all(root)?;
        let path = match name {
            Some(n) => {
                let p = root.join(n);
                fs::create_dir(&p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::AlreadyExists => CliError::RunExists(p.clone()),
                    _ => e.into(),
                })?;
                p
            }
            None => {
                let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
                let stem = match seed {
                    Some(s) => format!("{command}-{stamp}-s{s}"),
                    None => format!("{command}-{stamp}"),
                };
                let mut n = 1;
                loop {
                    let p = if n == 1 { root.join(&stem) } else { root.join(format!("{stem}-{n}")) };
                    match fs::create_dir(&p) {
                        Ok(()) => break p,
                        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        };
        Ok(Self { path, artifacts: Vec::new(), timings: Vec::new() })
    }

    pub fn inputs_dir(&self) -> PathBuf {
        self.path.join("inputs")
    }

    pub fn stage<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings.push(StageTiming { stage: stage.to_string(), seconds: t.elapsed().as_secs_f64() });
        Ok(out)
    }

    /// Records files written under `prefix` (relative to the run directory).
    pub fn record(&mut self, prefix: &str, files: impl IntoIterator<Item = String>) {
        for f in files {
            self.artifacts.push(if prefix.is_empty() { f } else { format!("{prefix}/{f}") });
        }
    }

    /// Writes a file that must not exist yet and records it.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::OpenOptions::new().write(true).create_new(true).open(&path)?;
        f.write_all(bytes)?;
        self.artifacts.push(rel.to_string());
        Ok(())
    }

    /// Writes `manifest.json` through a temporary file and a rename.
    pub fn finish(
        mut self,
        command: &str,
        args: Vec<String>,
        config: &PipelineConfig,
        config_sources: Vec<String>,
        inputs: Vec<(String, String)>,
    ) -> Result<PathBuf> {
        if self.inputs_dir().is_dir() {
            let mut names: Vec<String> = fs::read_dir(self.inputs_dir())?
                .map(|e| e.map(|e| format!("inputs/{}", e.file_name().to_string_lossy())))
                .collect::<std::io::Result<_>>()?;
            names.sort();
            self.artifacts.extend(names);
        }
        for a in &self.artifacts {
            if !self.path.join(a).exists() {
                return Err(CliError::Internal(format!("recorded artifact {a} was not written")));
            }
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args,
            created: chrono::Local::now().to_rfc3339(),
            seed: config.seed,
            config_sources,
            config: config.clone(),
            inputs,
            artifacts: self.artifacts,
            stage_timings: self.timings,
        };
        let tmp = self.path.join(format!("{MANIFEST}.tmp"));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(&tmp, self.path.join(MANIFEST))?;
        Ok(self.path)
    }
}

/// `--out`, else `$TMERGE_OUT_ROOT`, else `./runs`.
pub fn out_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_names_never_collide() {
        let root = tempfile::tempdir().unwrap();
        let a = RunDir::create(root.path(), "evaluate", Some(1), None).unwrap();
        let b = RunDir::create(root.path(), "evaluate", Some(1), None).unwrap();
        assert_ne!(a.path, b.path);
    }

    #[test]
    fn explicit_name_refuses_existing_dir() {
        let root = tempfile::tempdir().unwrap();
        RunDir::create(root.path(), "x", None, Some("r")).unwrap();
        let e = RunDir::create(root.path(), "x", None, Some("r")).err().unwrap();
        assert!(matches!(e, CliError::RunExists(_)));
    }

    #[test]
    fn manifest_round_trips_and_lists_artifacts() {
        let root = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(root.path(), "x", None, Some("r")).unwrap();
        run.stage("write", || Ok(())).unwrap();
        run.write("a/b.txt", b"hi").unwrap();
        assert!(run.write("a/b.txt", b"again").is_err());
        let dir = run.finish("x", vec![], &PipelineConfig::synthetic(), vec!["synthetic.preset".into()], vec![]).unwrap();
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m.artifacts, vec!["a/b.txt"]);
        assert_eq!(m.config, PipelineConfig::synthetic());
        assert_eq!(m.stage_timings.len(), 1);
        assert!(!dir.join("manifest.json.tmp").exists());
    }
}
