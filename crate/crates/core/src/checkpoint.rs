//! Checkpoint directories: `manifest.json` plus one little-endian f32 blob
//! per tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::Architecture;
use crate::tensor::{ConvDims, ParamEntry, ParamKind, ParameterSet, Tensor};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub phase: String,
    pub round: usize,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvDims>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture: Architecture,
    pub tensors: Vec<TensorRecord>,
    pub provenance: TrainingProvenance,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub params: ParameterSet,
    pub provenance: TrainingProvenance,
}

fn blob_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.f32")
}

impl Checkpoint {
    pub fn new(architecture: Architecture, params: ParameterSet, provenance: TrainingProvenance) -> Result<Self> {
        architecture
            .param_layout()
            .ensure_congruent(&params)
            .map_err(|e| Error::ArchitectureMismatch(e.to_string()))?;
        Ok(Self {
            architecture,
            params,
            provenance,
        })
    }

    /// Writes the checkpoint into `dir`, creating it if needed. Values are
    /// narrowed to f32.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, entry) in self.params.iter() {
            let file = blob_name(name);
            let mut bytes = Vec::with_capacity(entry.tensor.len() * 4);
            for &v in entry.tensor.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            let path = dir.join(&file);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            tensors.push(TensorRecord {
                name: name.to_string(),
                shape: entry.tensor.shape().to_vec(),
                kind: entry.kind,
                conv: entry.conv,
                file,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            architecture: self.architecture.clone(),
            tensors,
            provenance: self.provenance.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let mut params = ParameterSet::new();
        for rec in &manifest.tensors {
            let path = dir.join(&rec.file);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let expected: usize = rec.shape.iter().product::<usize>() * 4;
            if bytes.len() != expected {
                return Err(Error::Checkpoint(format!(
                    "{}: {} bytes, expected {expected}",
                    path.display(),
                    bytes.len()
                )));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            let tensor = Tensor::new(rec.shape.clone(), data)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", rec.name)))?;
            let entry = match rec.conv {
                Some(c) => ParamEntry::conv(c, tensor)
                    .map_err(|e| Error::Checkpoint(format!("{}: {e}", rec.name)))?,
                None => ParamEntry::new(rec.kind, tensor),
            };
            params
                .insert(rec.name.clone(), entry)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Self::new(manifest.architecture, params, manifest.provenance)
    }

    /// Loads and checks the architecture against `expected`.
    pub fn load_for(dir: impl AsRef<Path>, expected: &Architecture) -> Result<Self> {
        let ck = Self::load(dir)?;
        if &ck.architecture != expected {
            return Err(Error::ArchitectureMismatch(format!(
                "checkpoint has {} layers over {} inputs, config describes {} layers over {} inputs",
                ck.architecture.layers.len(),
                ck.architecture.input_dim,
                expected.layers.len(),
                expected.input_dim
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn sample() -> Checkpoint {
        let arch = Architecture::mlp(3, &[4], 2, Activation::Relu);
        let params = arch.init_params(9);
        Checkpoint::new(
            arch,
            params,
            TrainingProvenance {
                phase: "train".into(),
                round: 3,
                seed: 9,
                config_digest: "00ff".into(),
            },
        )
        .unwrap()
    }

    fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn save_load_save_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        sample().save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        loaded.save(&b).unwrap();
        assert_eq!(files(&a), files(&b));
        assert_eq!(loaded.provenance.round, 3);
    }

    #[test]
    fn rejects_mismatch_and_version() {
        let tmp = tempfile::tempdir().unwrap();
        sample().save(tmp.path()).unwrap();
        let other = Architecture::mlp(3, &[5], 2, Activation::Relu);
        assert!(matches!(
            Checkpoint::load_for(tmp.path(), &other),
            Err(Error::ArchitectureMismatch(_))
        ));
        let m = tmp.path().join(MANIFEST);
        let text = std::fs::read_to_string(&m).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        std::fs::write(&m, text).unwrap();
        assert!(matches!(Checkpoint::load(tmp.path()), Err(Error::Checkpoint(_))));
    }
}
