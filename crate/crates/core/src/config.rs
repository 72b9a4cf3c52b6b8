//! Run configuration file (TOML) and its digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticSpec;
use crate::federation::FederationConfig;
use crate::nn::{Activation, Architecture, LayerSpec};
use crate::seed::{derive_seed, Stream};
use crate::unlearn::UnlearnConfig;
use crate::{Error, Result};

/// Optional convolutional stem placed before the dense hidden layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStem {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub conv: Option<ConvStem>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
            conv: None,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, input_dim: usize, classes: usize) -> Result<Architecture> {
        let mut layers = Vec::new();
        let mut width = input_dim;
        if let Some(c) = &self.conv {
            let expected = c.in_channels * c.height * c.width;
            if expected != input_dim {
                return Err(Error::Config(format!(
                    "model.conv: {}x{}x{} input does not match {input_dim} features",
                    c.in_channels, c.height, c.width
                )));
            }
            let layer = LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.filters,
                kernel: c.kernel,
                input_hw: [c.height, c.width],
                activation: self.activation,
            };
            if c.kernel[0] == 0 || c.kernel[1] == 0 || c.kernel[0] > c.height || c.kernel[1] > c.width {
                return Err(Error::Config(format!(
                    "model.conv: kernel {:?} does not fit a {}x{} image",
                    c.kernel, c.height, c.width
                )));
            }
            width = layer.output_len();
            layers.push(layer);
        }
        for &h in &self.hidden {
            layers.push(LayerSpec::Dense {
                inputs: width,
                outputs: h,
                activation: self.activation,
            });
            width = h;
        }
        if layers.is_empty() {
            return Err(Error::Config(
                "model: at least one hidden layer is needed to define features".into(),
            ));
        }
        layers.push(LayerSpec::Dense {
            inputs: width,
            outputs: classes,
            activation: Activation::Identity,
        });
        let arch = Architecture { input_dim, layers };
        arch.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labelled CSV file; when absent the synthetic generator is used.
    pub csv: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub target_client: usize,
    pub output_dir: PathBuf,
    pub fgmp_enabled: bool,
    pub post_train_enabled: bool,
    pub federation: FederationConfig,
    pub unlearn: UnlearnConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            target_client: 0,
            output_dir: PathBuf::from("runs"),
            fgmp_enabled: true,
            post_train_enabled: true,
            federation: FederationConfig::default(),
            unlearn: UnlearnConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn field(section: &str, e: Error) -> Error {
    let msg = match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    };
    Error::Config(format!("{section}: {msg}"))
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.federation.validate().map_err(|e| field("federation", e))?;
        self.unlearn.validate().map_err(|e| field("unlearn", e))?;
        if self.target_client >= self.federation.clients {
            return Err(Error::Config(format!(
                "target_client: {} is not below federation.clients = {}",
                self.target_client, self.federation.clients
            )));
        }
        match &self.data.csv {
            Some(p) if !p.is_file() => {
                return Err(Error::Config(format!("data.csv: {} does not exist", p.display())));
            }
            Some(_) => {}
            None => {
                self.data.synthetic.validate().map_err(|e| field("data.synthetic", e))?;
                if let Some(b) = self.data.synthetic.client_bias.iter().find(|b| b.client >= self.federation.clients) {
                    return Err(Error::Config(format!(
                        "data.synthetic.client_bias: client {} does not exist",
                        b.client
                    )));
                }
            }
        }
        if let Some(c) = &self.model.conv {
            if c.in_channels == 0 || c.height == 0 || c.width == 0 || c.filters == 0 {
                return Err(Error::Config("model.conv: all sizes must be positive".into()));
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden: widths must be positive".into()));
        }
        if self.model.hidden.is_empty() && self.model.conv.is_none() {
            return Err(Error::Config(
                "model: at least one hidden layer is needed to define features".into(),
            ));
        }
        Ok(())
    }

    /// Federation settings with the seed derived from the run seed.
    pub fn federation_config(&self) -> FederationConfig {
        FederationConfig {
            seed: self.seed,
            ..self.federation.clone()
        }
    }

    /// Unlearning settings with the run seed and the ablation flag applied.
    pub fn unlearn_config(&self) -> UnlearnConfig {
        UnlearnConfig {
            seed: derive_seed(self.seed, Stream::Unlearn, self.target_client as u64),
            fgmp_enabled: self.fgmp_enabled,
            ..self.unlearn.clone()
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: derive_seed(self.seed, Stream::Data, 0),
            ..self.data.synthetic.clone()
        }
    }

    /// Method name encoding the ablation flags.
    pub fn method_name(&self) -> &'static str {
        match (self.fgmp_enabled, self.post_train_enabled) {
            (true, true) => "fcu",
            (false, true) => "fcu-no-fgmp",
            (true, false) => "fcu-no-post-train",
            (false, false) => "fcu-no-fgmp-no-post-train",
        }
    }

    /// SHA-256 over the experiment-defining fields, hex, 16 chars. The
    /// output directory and the ablation flags are left out so that
    /// ablation runs of one experiment share a digest.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        canon.fgmp_enabled = true;
        canon.post_train_enabled = true;
        let json = serde_json::to_string(&canon).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_files() {
        let c = RunConfig::parse("seed = 3\n[federation]\nclients = 4\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.federation.clients, 4);
        assert_eq!(c.federation.rounds, 30);
        assert_eq!(c.unlearn.temperature, 0.5);
        assert_eq!(c.unlearn.fgmp_interval, 10);
        assert_eq!(c.unlearn.iterations, 100);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::parse("[federation]\nclinets = 4\n").is_err());
        assert!(RunConfig::parse("[federation]\nseed = 4\n").is_err());
    }

    #[test]
    fn field_level_messages() {
        let c = RunConfig {
            target_client: 5,
            ..RunConfig::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("target_client"), "{msg}");

        let mut c = RunConfig::default();
        c.federation.clients = 1;
        assert!(c.validate().unwrap_err().to_string().contains("federation"));

        let mut c = RunConfig::default();
        c.data.csv = Some("/definitely/not/here.csv".into());
        assert!(c.validate().unwrap_err().to_string().contains("data.csv"));
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn digest_tracks_fields() {
        let base = RunConfig::default();
        let d = base.digest();
        assert_eq!(d.len(), 16);
        let mut perturbed = Vec::new();
        let mut c = base.clone();
        c.seed += 1;
        perturbed.push(c);
        let mut c = base.clone();
        c.target_client = 1;
        perturbed.push(c);
        let mut c = base.clone();
        c.federation.rounds += 1;
        perturbed.push(c);
        let mut c = base.clone();
        c.federation.learning_rate *= 2.0;
        perturbed.push(c);
        let mut c = base.clone();
        c.unlearn.temperature = 0.25;
        perturbed.push(c);
        let mut c = base.clone();
        c.unlearn.ratio = 0.75;
        perturbed.push(c);
        let mut c = base.clone();
        c.model.hidden = vec![16];
        perturbed.push(c);
        let mut c = base.clone();
        c.data.synthetic.noise = 1.5;
        perturbed.push(c);
        let mut digests: Vec<String> = perturbed.iter().map(RunConfig::digest).collect();
        digests.push(d.clone());
        let n = digests.len();
        digests.sort();
        digests.dedup();
        assert_eq!(digests.len(), n);

        let mut c = base.clone();
        c.output_dir = "elsewhere".into();
        c.fgmp_enabled = false;
        assert_eq!(c.digest(), d);
    }

    #[test]
    fn conv_stem_architecture() {
        let m = ModelConfig {
            hidden: vec![8],
            activation: Activation::Tanh,
            conv: Some(ConvStem {
                in_channels: 1,
                height: 4,
                width: 4,
                filters: 2,
                kernel: [3, 3],
            }),
        };
        let a = m.architecture(16, 2).unwrap();
        assert_eq!(a.layers.len(), 3);
        assert_eq!(a.feature_dim(), 8);
        assert!(m.architecture(15, 2).is_err());
    }
}
