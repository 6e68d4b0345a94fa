use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PillarConfig {
    /// Pillar side length, meters.
    pub pillar_size: f64,
    pub area_half_extent: f64,
    pub embed_dim: usize,
    /// Encoder levels; level `i` has `embed_dim · 2^i` channels at
    /// `grid / 2^i` resolution.
    pub unet_levels: usize,
    /// Hidden width of the per-point decode MLP.
    pub decoder_hidden: usize,
}

impl Default for PillarConfig {
    fn default() -> Self {
        PillarConfig {
            pillar_size: 0.2,
            area_half_extent: 51.2,
            embed_dim: 16,
            unet_levels: 4,
            decoder_hidden: 32,
        }
    }
}

impl PillarConfig {
    /// Small area and embedding for CPU-scale experiments.
    pub fn desk() -> Self {
        PillarConfig {
            area_half_extent: 12.8,
            embed_dim: 8,
            ..PillarConfig::default()
        }
    }

    /// The scaled-up variant: half the pillar size, twice the embedding and
    /// one more U-Net level.
    pub fn xl(&self) -> Self {
        PillarConfig {
            pillar_size: self.pillar_size / 2.0,
            embed_dim: self.embed_dim * 2,
            unet_levels: self.unet_levels + 1,
            ..self.clone()
        }
    }

    /// Cells per side of the pseudoimage.
    pub fn grid_cells(&self) -> usize {
        (2.0 * self.area_half_extent / self.pillar_size).round() as usize
    }

    pub fn channels(&self) -> Vec<usize> {
        (0..self.unet_levels).map(|i| self.embed_dim << i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pillar_size > 0.0) || !(self.area_half_extent > 0.0) {
            return Err(Error::InvalidConfig(
                "pillar_size and area_half_extent must be positive".into(),
            ));
        }
        if self.embed_dim == 0 || self.unet_levels == 0 || self.decoder_hidden == 0 {
            return Err(Error::InvalidConfig(
                "embed_dim, unet_levels and decoder_hidden must be >= 1".into(),
            ));
        }
        let ratio = 2.0 * self.area_half_extent / self.pillar_size;
        let cells = ratio.round();
        if cells < 1.0 || (ratio - cells).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "area width {} m is not a whole number of {} m pillars",
                2.0 * self.area_half_extent,
                self.pillar_size
            )));
        }
        let step = 1usize << (self.unet_levels - 1);
        if cells as usize % step != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} cells per side is not divisible by {step} for {} U-Net levels",
                cells, self.unet_levels
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(PillarConfig::default().grid_cells(), 512);
        assert_eq!(PillarConfig::desk().grid_cells(), 128);
        let doubled = PillarConfig {
            area_half_extent: 25.6,
            ..PillarConfig::desk()
        };
        assert_eq!(doubled.grid_cells(), 2 * PillarConfig::desk().grid_cells());
    }

    #[test]
    fn xl_relation() {
        for base in [PillarConfig::default(), PillarConfig::desk()] {
            let xl = base.xl();
            assert_eq!(xl.grid_cells().pow(2), 4 * base.grid_cells().pow(2));
            assert_eq!(xl.embed_dim, 2 * base.embed_dim);
            assert_eq!(xl.unet_levels, base.unet_levels + 1);
            xl.validate().unwrap();
        }
    }

    #[test]
    fn rejects_indivisible_grids() {
        let c = PillarConfig {
            pillar_size: 0.3,
            area_half_extent: 1.0,
            ..PillarConfig::default()
        };
        assert!(c.validate().is_err());
        let c = PillarConfig {
            pillar_size: 0.5,
            area_half_extent: 2.5,
            unet_levels: 3,
            ..PillarConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<PillarConfig>(r#"{"pillar": 1}"#).is_err());
    }
}
