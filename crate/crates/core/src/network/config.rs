use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Hyperparameters of the two-stage denoiser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// 1 for grayscale, 3 for RGB.
    pub input_channels: usize,
    /// Feature width of every convolution and sub-network.
    pub base_channels: usize,
    /// Pyramid level of every SPA block.
    pub spa_level: usize,
    /// EAM+ blocks per reconstruction sub-network, deepest pyramid level
    /// first. Its length minus one is the reconstruction pyramid depth.
    pub eam_counts: Vec<usize>,
    /// Channel attention reduction ratio.
    pub reduction: usize,
}

impl ModelConfig {
    /// Full-size network: 64 channels, level-3 SPA, a level-3 pyramid with
    /// 2, 2, 4, 4 EAM+ blocks from the top level down.
    pub fn paper() -> Self {
        ModelConfig {
            input_channels: 3,
            base_channels: 64,
            spa_level: 3,
            eam_counts: vec![2, 2, 4, 4],
            reduction: 4,
        }
    }

    /// Desk-scale grayscale model.
    pub fn toy() -> Self {
        ModelConfig {
            input_channels: 1,
            base_channels: 8,
            spa_level: 2,
            eam_counts: vec![2, 2, 4, 4],
            reduction: 4,
        }
    }

    pub fn pyramid_levels(&self) -> usize {
        self.eam_counts.len().saturating_sub(1)
    }

    /// Spatial extents fed to the model must be multiples of this.
    pub fn alignment(&self) -> usize {
        1 << self.spa_level.max(self.pyramid_levels())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("invalid model config: {msg}")));
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.base_channels == 0 || self.reduction == 0 {
            return bad("base_channels and reduction must be positive".into());
        }
        if self.base_channels % self.reduction != 0 {
            return bad(format!(
                "base_channels {} is not divisible by reduction {}",
                self.base_channels, self.reduction
            ));
        }
        if self.eam_counts.is_empty() || self.eam_counts.contains(&0) {
            return bad(format!(
                "eam_counts must be non-empty with every count >= 1, got {:?}",
                self.eam_counts
            ));
        }
        Ok(())
    }

    /// `key = value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let counts: Vec<String> = self.eam_counts.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "input_channels = {}", self.input_channels);
        let _ = writeln!(s, "base_channels = {}", self.base_channels);
        let _ = writeln!(s, "spa_level = {}", self.spa_level);
        let _ = writeln!(s, "eam_counts = {}", counts.join(","));
        let _ = writeln!(s, "reduction = {}", self.reduction);
        s
    }

    /// Applies one `key = value` setting. Returns `false` for keys that do
    /// not belong to the model.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        let int = |v: &str| v.parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
        match key {
            "input_channels" => self.input_channels = int(value)?,
            "base_channels" => self.base_channels = int(value)?,
            "spa_level" => self.spa_level = int(value)?,
            "reduction" => self.reduction = int(value)?,
            "eam_counts" => {
                self.eam_counts = value
                    .split(',')
                    .map(|v| int(v.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let cfg = ModelConfig::paper();
        let mut back = ModelConfig::toy();
        for line in cfg.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            assert!(back.set(k.trim(), v.trim()).unwrap());
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::toy().validate().is_ok());
        let mut c = ModelConfig::toy();
        c.base_channels = 6;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.eam_counts = vec![2, 0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn alignment_covers_both_pyramids() {
        assert_eq!(ModelConfig::toy().alignment(), 8);
        let mut c = ModelConfig::toy();
        c.spa_level = 4;
        assert_eq!(c.alignment(), 16);
    }
}
