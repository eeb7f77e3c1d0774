//! `key = value` run configuration for the `train` and `ablate` commands.
//! Blank lines and `#` comments are ignored; unknown or repeated keys are
//! errors.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::training::{NoiseModel, TrainConfig};

/// Where training pairs come from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub noise: NoiseModel,
    /// Number of procedural clean images in the training pool.
    pub pool_images: usize,
    /// Side length of each pool image.
    pub image_size: usize,
    /// Read `clean/` and `noisy/` pairs from here instead of synthesizing.
    pub data_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            noise: NoiseModel::desk(),
            pool_images: 64,
            image_size: 64,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# model\n");
        s.push_str(&self.model.to_kv());
        s.push_str("\n# training\n");
        s.push_str(&self.train.to_kv());
        s.push_str("\n# data\n");
        let (kind, [sigma, banding, correlated, signal]) = match self.data.noise {
            NoiseModel::Awgn { sigma } => ("awgn", [sigma, 0.0, 0.0, 0.0]),
            NoiseModel::Structured {
                sigma,
                banding,
                correlated,
                signal_dependent,
            } => ("structured", [sigma, banding, correlated, signal_dependent]),
        };
        let _ = writeln!(s, "noise = {kind}");
        let _ = writeln!(s, "sigma = {sigma}");
        if kind == "structured" {
            let _ = writeln!(s, "banding = {banding}");
            let _ = writeln!(s, "correlated = {correlated}");
            let _ = writeln!(s, "signal_dependent = {signal}");
        }
        let _ = writeln!(s, "pool_images = {}", self.data.pool_images);
        let _ = writeln!(s, "image_size = {}", self.data.image_size);
        if let Some(dir) = &self.data.data_dir {
            let _ = writeln!(s, "data_dir = {}", dir.display());
        }
        s
    }
}

#[derive(Default)]
struct NoiseKeys {
    kind: Option<String>,
    sigma: Option<f64>,
    banding: Option<f64>,
    correlated: Option<f64>,
    signal_dependent: Option<f64>,
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut noise = NoiseKeys::default();
    let mut seen: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| Error::Config { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.iter().any(|k| k == key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        seen.push(key.to_string());
        let float = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{key}: `{v}`: {e}")));
        let int = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{key}: `{v}`: {e}")));
        match key {
            "noise" => noise.kind = Some(value.to_string()),
            "sigma" => noise.sigma = Some(float(value)?),
            "banding" => noise.banding = Some(float(value)?),
            "correlated" => noise.correlated = Some(float(value)?),
            "signal_dependent" => noise.signal_dependent = Some(float(value)?),
            "pool_images" => cfg.data.pool_images = int(value)?,
            "image_size" => cfg.data.image_size = int(value)?,
            "data_dir" => cfg.data.data_dir = Some(PathBuf::from(value)),
            _ => {
                let model = cfg.model.set(key, value).map_err(|e| err(format!("{key}: {e}")))?;
                let train = model || cfg.train.set(key, value).map_err(|e| err(format!("{key}: {e}")))?;
                if !train {
                    return Err(err(format!("unknown key `{key}`")));
                }
            }
        }
    }
    cfg.data.noise = build_noise(noise)?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.data.noise.validate()?;
    Ok(cfg)
}

fn build_noise(k: NoiseKeys) -> Result<NoiseModel> {
    let desk = NoiseModel::desk();
    let NoiseModel::Structured {
        sigma,
        banding,
        correlated,
        signal_dependent,
    } = desk
    else {
        unreachable!("desk noise is structured")
    };
    match k.kind.as_deref() {
        None | Some("structured") => Ok(NoiseModel::Structured {
            sigma: k.sigma.unwrap_or(sigma),
            banding: k.banding.unwrap_or(banding),
            correlated: k.correlated.unwrap_or(correlated),
            signal_dependent: k.signal_dependent.unwrap_or(signal_dependent),
        }),
        Some("awgn") => {
            if k.banding.is_some() || k.correlated.is_some() || k.signal_dependent.is_some() {
                return Err(Error::Invalid(
                    "structured noise keys are not allowed with `noise = awgn`".into(),
                ));
            }
            Ok(NoiseModel::Awgn {
                sigma: k.sigma.unwrap_or(0.1),
            })
        }
        Some(other) => Err(Error::Invalid(format!(
            "unknown noise kind `{other}` (expected `awgn` or `structured`)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = parse_run_config("# toy\nbase_channels = 4\niterations = 10 # short\n\nnoise = awgn\nsigma = 0.2\n").unwrap();
        assert_eq!(cfg.model.base_channels, 4);
        assert_eq!(cfg.train.iterations, 10);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.data.noise, NoiseModel::Awgn { sigma: 0.2 });
    }

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.train.seed = 77;
        cfg.data.data_dir = Some("pairs".into());
        assert_eq!(parse_run_config(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_line() {
        let line = |t: &str| match parse_run_config(t) {
            Err(Error::Config { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line("iterations = 5\nitertions = 5\n"), 2);
        assert_eq!(line("\n\nseed = x\n"), 3);
        assert_eq!(line("seed = 1\nseed = 2\n"), 2);
        assert_eq!(line("just words\n"), 1);
        assert!(parse_run_config("noise = pink\n").is_err());
        assert!(parse_run_config("base_channels = 6\nreduction = 4\n").is_err());
    }
}
