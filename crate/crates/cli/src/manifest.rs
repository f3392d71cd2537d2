//! Stage manifests: content hashes of every input and output, used to
//! refuse work on artifacts that no longer match what produced them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mutraj_core::artifact::{sha256_file, sha256_hex, write_atomic};

use crate::config::{PipelineConfig, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub schema: u32,
    pub config_hash: String,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path to content hash.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub info: BTreeMap<String, serde_json::Value>,
}

/// An output directory plus the configuration driving it.
#[derive(Debug, Clone)]
pub struct Run {
    pub out: PathBuf,
    pub cfg: PipelineConfig,
}

fn key(p: &Path) -> String {
    p.display().to_string()
}

impl Run {
    pub fn new(out: impl Into<PathBuf>, cfg: PipelineConfig) -> Self {
        Self { out: out.into(), cfg }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn manifest_dir(&self) -> PathBuf {
        self.out.join("manifests")
    }

    pub fn manifest_path(&self, stage: &str) -> PathBuf {
        self.manifest_dir().join(format!("{stage}.json"))
    }

    pub fn read_manifest(&self, stage: &str) -> Result<Option<Manifest>> {
        let p = self.manifest_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?))
    }

    fn manifests(&self) -> Result<Vec<Manifest>> {
        let dir = self.manifest_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        names
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            })
            .collect()
    }

    /// Hashes `path` and, when an earlier stage recorded it as an output,
    /// checks it is unchanged and that the producing stage's own inputs are
    /// unchanged too.
    pub fn verify_input(&self, path: &Path) -> Result<String> {
        if !path.exists() {
            bail!("missing input {}", path.display());
        }
        let sha = sha256_file(path).with_context(|| format!("hashing {}", path.display()))?;
        let k = key(path);
        for m in self.manifests()? {
            let Some(recorded) = m.outputs.get(&k) else { continue };
            if *recorded != sha {
                bail!(
                    "stale artifact {}: contents differ from what stage `{}` recorded; rerun `{}`",
                    path.display(),
                    m.stage,
                    m.stage
                );
            }
            for (input, input_sha) in &m.inputs {
                let p = Path::new(input);
                let current = if p.exists() { Some(sha256_file(p)?) } else { None };
                if current.as_ref() != Some(input_sha) {
                    bail!(
                        "stale artifact {}: stage `{}` built it from {}, which has changed since; rerun `{}`",
                        path.display(),
                        m.stage,
                        input,
                        m.stage
                    );
                }
            }
        }
        Ok(sha)
    }

    /// Writes the stage manifest and a snapshot of the resolved config.
    pub fn finish(
        &self,
        stage: &str,
        inputs: &[(PathBuf, String)],
        outputs: &[PathBuf],
        info: BTreeMap<String, serde_json::Value>,
    ) -> Result<Manifest> {
        let snapshot = self.cfg.snapshot();
        let manifest = Manifest {
            stage: stage.to_string(),
            schema: SCHEMA_VERSION,
            config_hash: sha256_hex(snapshot.as_bytes()),
            inputs: inputs.iter().map(|(p, h)| (key(p), h.clone())).collect(),
            outputs: outputs
                .iter()
                .map(|p| Ok((key(p), sha256_file(p).with_context(|| format!("hashing {}", p.display()))?)))
                .collect::<Result<_>>()?,
            info,
        };
        write_atomic(&self.manifest_dir().join(format!("{stage}.config")), snapshot.as_bytes())?;
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        write_atomic(&self.manifest_path(stage), json.as_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_changed_outputs_and_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let run = Run::new(dir.path(), PipelineConfig::default());
        let src = run.path("src.txt");
        let out = run.path("out.txt");
        write_atomic(&src, b"a").unwrap();
        let src_sha = run.verify_input(&src).unwrap();
        write_atomic(&out, b"b").unwrap();
        run.finish("make", &[(src.clone(), src_sha)], std::slice::from_ref(&out), BTreeMap::new()).unwrap();
        assert!(run.verify_input(&out).is_ok());

        write_atomic(&out, b"tampered").unwrap();
        let err = run.verify_input(&out).unwrap_err().to_string();
        assert!(err.contains("stale artifact") && err.contains("make"), "{err}");

        write_atomic(&out, b"b").unwrap();
        write_atomic(&src, b"changed").unwrap();
        let err = run.verify_input(&out).unwrap_err().to_string();
        assert!(err.contains("src.txt"), "{err}");
        assert!(run.verify_input(&run.path("nope")).is_err());
    }
}
