use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How lambda reaches the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// One mapping network per conditional block (distributed).
    CirDm,
    /// One deep mapping network shared by every block (centralized).
    CirCm,
    /// Lambda tiled as an extra input channel.
    Concat,
    /// No conditioning; trained for one lambda.
    Fixed,
}

impl std::str::FromStr for Conditioning {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cir_dm" => Ok(Conditioning::CirDm),
            "cir_cm" => Ok(Conditioning::CirCm),
            "concat" => Ok(Conditioning::Concat),
            "fixed" => Ok(Conditioning::Fixed),
            other => Err(Error::Config(format!(
                "unknown conditioning variant `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Conditioning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Conditioning::CirDm => "cir_dm",
            Conditioning::CirCm => "cir_cm",
            Conditioning::Concat => "concat",
            Conditioning::Fixed => "fixed",
        })
    }
}

/// Architecture constants of a registration model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub levels: usize,
    pub blocks_per_level: usize,
    pub conv_filters: usize,
    pub latent_dim: usize,
    pub mapping_layers: usize,
    pub central_latent_dim: usize,
    pub central_mapping_layers: usize,
    pub lambda_range: (f64, f64),
    pub conditioning: Conditioning,
    /// Training lambda of the `fixed` variant.
    #[serde(default)]
    pub fixed_lambda: Option<f64>,
    pub dims: usize,
    /// Seed of the weight initializer.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 3,
            blocks_per_level: 5,
            conv_filters: 28,
            latent_dim: 64,
            mapping_layers: 4,
            central_latent_dim: 256,
            central_mapping_layers: 8,
            lambda_range: (0.0, 10.0),
            conditioning: Conditioning::CirDm,
            fixed_lambda: None,
            dims: 3,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn variant(conditioning: Conditioning, dims: usize) -> Self {
        ModelConfig {
            conditioning,
            dims,
            ..Self::default()
        }
    }

    pub fn fixed(lambda: f64, dims: usize) -> Self {
        ModelConfig {
            conditioning: Conditioning::Fixed,
            fixed_lambda: Some(lambda),
            dims,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.blocks_per_level == 0 {
            return Err(Error::Config(
                "levels and blocks_per_level must be >= 1".into(),
            ));
        }
        if self.conv_filters == 0 || self.latent_dim == 0 || self.central_latent_dim == 0 {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.mapping_layers == 0 || self.central_mapping_layers == 0 {
            return Err(Error::Config(
                "mapping networks need at least one layer".into(),
            ));
        }
        let (lo, hi) = self.lambda_range;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!(
                "lambda range ({lo}, {hi}) must be non-negative and increasing"
            )));
        }
        if !(2..=3).contains(&self.dims) {
            return Err(Error::Config(format!(
                "dims must be 2 or 3, got {}",
                self.dims
            )));
        }
        match (self.conditioning, self.fixed_lambda) {
            (Conditioning::Fixed, None) => {
                return Err(Error::Config("fixed variant needs fixed_lambda".into()))
            }
            (Conditioning::Fixed, Some(l)) if !(lo..=hi).contains(&l) => {
                return Err(Error::Range(format!(
                    "fixed lambda {l} outside [{lo}, {hi}]"
                )))
            }
            _ => {}
        }
        Ok(())
    }

    /// Maps a raw lambda into `[0, 1]`.
    pub fn normalize_lambda(&self, raw: f64) -> Result<f64> {
        let (lo, hi) = self.lambda_range;
        if !(lo..=hi).contains(&raw) {
            return Err(Error::Range(format!("lambda {raw} outside [{lo}, {hi}]")));
        }
        Ok((raw - lo) / (hi - lo))
    }

    /// Smallest factor every image axis must be divisible by: the coarsest
    /// level is downsampled `L - 1` times and then encoded to a quarter.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_architecture() {
        let c = ModelConfig::default();
        assert_eq!((c.levels, c.blocks_per_level, c.conv_filters), (3, 5, 28));
        assert_eq!((c.latent_dim, c.mapping_layers), (64, 4));
        assert_eq!((c.central_latent_dim, c.central_mapping_layers), (256, 8));
        assert_eq!(c.lambda_range, (0.0, 10.0));
        c.validate().unwrap();
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [
            Conditioning::CirDm,
            Conditioning::CirCm,
            Conditioning::Concat,
            Conditioning::Fixed,
        ] {
            assert_eq!(v.to_string().parse::<Conditioning>().unwrap(), v);
        }
        assert!(matches!(
            "hyper".parse::<Conditioning>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::default();
        c.lambda_range = (5.0, 5.0);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.levels = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::fixed(0.5, 2);
        c.fixed_lambda = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn lambda_normalization() {
        let c = ModelConfig::default();
        assert_eq!(c.normalize_lambda(4.0).unwrap(), 0.4);
        assert!(matches!(c.normalize_lambda(12.0), Err(Error::Range(_))));
    }
}
