use std::path::{Path, PathBuf};

use phonoguard_core::federated::ScenarioConfig;
use phonoguard_core::head::{TrainConfig, DEFAULT_MC_PASSES};
use phonoguard_core::metrics::TdcfCosts;
use phonoguard_core::physics::PhysicsConfig;
use phonoguard_core::pipeline::PipelineConfig;
use phonoguard_core::signal::DEFAULT_FRAME_RATE;
use phonoguard_core::SyntheticCorpusSpec;
use serde::{Deserialize, Serialize};

/// Where segments come from. Without a manifest the `[synthetic]` corpus
/// is generated in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub manifest: Option<PathBuf>,
    /// Frame rate assumed for CSV embeddings, which carry no header.
    pub embedding_frame_rate: u32,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            manifest: None,
            embedding_frame_rate: DEFAULT_FRAME_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { test_fraction: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub passes: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            passes: DEFAULT_MC_PASSES,
        }
    }
}

/// Saved artifacts consumed by `predict` and `metrics`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsSection {
    pub model: Option<PathBuf>,
    pub fusion: Option<PathBuf>,
    pub scaler: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub corpus: CorpusSection,
    pub synthetic: SyntheticCorpusSpec,
    pub physics: PhysicsConfig,
    pub split: SplitSection,
    pub train: TrainConfig,
    pub mc: McSection,
    pub metrics: TdcfCosts,
    pub inputs: InputsSection,
    pub flsim: ScenarioConfig,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        // Relative paths in the config are relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut cfg.corpus.manifest);
        fix(&mut cfg.inputs.model);
        fix(&mut cfg.inputs.fusion);
        fix(&mut cfg.inputs.scaler);
        fix(&mut cfg.inputs.predictions);
        fix(&mut cfg.inputs.features);
        Ok(cfg)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            test_fraction: self.split.test_fraction,
            mc_passes: self.mc.passes,
            physics: self.physics,
            train: self.train.clone(),
            costs: self.metrics,
        }
    }

    /// Sections every command depends on; failures name the offending field.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.corpus.embedding_frame_rate == 0 {
            anyhow::bail!("corpus.embedding_frame_rate: must be positive");
        }
        if self.corpus.manifest.is_none() {
            self.synthetic
                .validate()
                .map_err(|e| anyhow::anyhow!("synthetic: {e}"))?;
        }
        self.pipeline()
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn sections_parse() {
        let cfg: Config = toml::from_str(
            r#"
            seed = 7
            [synthetic]
            n_genuine = 10
            [train]
            hidden = [8]
            dropout_rate = 0.0
            [mc]
            passes = 3
            [flsim]
            clients = 5
            [flsim.local]
            epochs = 1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.synthetic.n_genuine, 10);
        assert_eq!(cfg.train.hidden, vec![8]);
        assert_eq!(cfg.mc.passes, 3);
        assert_eq!(cfg.flsim.clients, 5);
        assert_eq!(cfg.flsim.local.epochs, 1);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = toml::from_str::<Config>("[train]\nepochz = 3\n").unwrap_err();
        assert!(err.to_string().contains("epochz"));
    }
}
