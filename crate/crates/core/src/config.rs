//! Flat `key=value` pipeline configuration with `gen.`, `model.`, `split.`,
//! `sweep.` and `mws.` sections.
//!
//! Lists are comma separated. Blank lines and `#` comments are ignored.
//! `IGMSEG_SEED`, when set, replaces every seed in the file.

use std::fs;
use std::path::Path;

use crate::affinity::SweepConfig;
use crate::error::{Error, Result};
use crate::model::HoldoutSampler;
use crate::mws::MwsConfig;
use crate::splitter::BandSchedule;
use crate::synth::GenConfig;

pub const SEED_ENV: &str = "IGMSEG_SEED";

/// Local-statistics fitting options.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub bandwidths: Vec<f64>,
    pub sampler: HoldoutSampler,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            bandwidths: vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
            sampler: HoldoutSampler::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub gen: GenConfig,
    pub fit: FitConfig,
    /// Oracle field of view written by `generate`; `None` is unbounded.
    pub oracle_fov: Option<f64>,
    pub sweep: SweepConfig,
    pub mws: MwsConfig,
    pub alpha_grid: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            fit: FitConfig::default(),
            oracle_fov: None,
            sweep: SweepConfig::default(),
            mws: MwsConfig::default(),
            alpha_grid: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
        }
    }
}

fn parse_err(line: usize, key: &str, value: &str, what: &str) -> Error {
    Error::Config {
        line,
        message: format!("{key}: expected {what}, got {value:?}"),
    }
}

fn real(line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| parse_err(line, key, v, "a finite number"))
}

fn int<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| parse_err(line, key, v, "a non-negative integer"))
}

fn reals(line: usize, key: &str, v: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| real(line, key, x.trim())).collect()
}

impl PipelineConfig {
    /// Parses configuration text over the defaults; the environment is not consulted.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected key=value, got {trimmed:?}"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
            let g = &mut cfg.gen;
            let p = &mut g.params;
            match key {
                "gen.height" => g.height = int(line, key, v)?,
                "gen.width" => g.width = int(line, key, v)?,
                "gen.count" => g.count = int(line, key, v)?,
                "gen.instances_min" => g.instances.0 = int(line, key, v)?,
                "gen.instances_max" => g.instances.1 = int(line, key, v)?,
                "gen.radius_min" => g.radius.0 = real(line, key, v)?,
                "gen.radius_max" => g.radius.1 = real(line, key, v)?,
                "gen.touch_prob" => g.touch_prob = real(line, key, v)?,
                "gen.seed" => g.seed = int(line, key, v)?,
                "gen.base_mean" => p.base_mean = real(line, key, v)?,
                "gen.base_variance" => p.base_variance = real(line, key, v)?,
                "gen.field_variance" => p.field_variance = real(line, key, v)?,
                "gen.correlation_length" => p.correlation_length = real(line, key, v)?,
                "gen.noise_variance" => p.noise_variance = real(line, key, v)?,
                "gen.background_mean" => p.background_mean = real(line, key, v)?,
                "gen.background_variance" => p.background_variance = real(line, key, v)?,
                "model.oracle_fov" => {
                    cfg.oracle_fov = if v == "inf" { None } else { Some(real(line, key, v)?) }
                }
                "model.bandwidths" => cfg.fit.bandwidths = reals(line, key, v)?,
                "model.masks_per_image" => cfg.fit.sampler.masks_per_image = int(line, key, v)?,
                "model.min_fraction" => cfg.fit.sampler.min_fraction = real(line, key, v)?,
                "model.max_fraction" => cfg.fit.sampler.max_fraction = real(line, key, v)?,
                "model.seed" => cfg.fit.seed = int(line, key, v)?,
                "split.iterations" => cfg.sweep.split.iterations = int(line, key, v)?,
                "split.d0" => cfg.sweep.split.d0 = real(line, key, v)?,
                "split.smoothing_sigmas" => cfg.sweep.split.smoothing_sigmas = reals(line, key, v)?,
                "split.schedule" => {
                    cfg.sweep.split.schedule = match v {
                        "fixed" => BandSchedule::Fixed,
                        "annealed" => BandSchedule::Annealed,
                        _ => return Err(parse_err(line, key, v, "fixed or annealed")),
                    }
                }
                "split.min_region" => cfg.sweep.split.min_region = int(line, key, v)?,
                "split.max_depth" => cfg.sweep.split.max_depth = int(line, key, v)?,
                "sweep.patch_size" => cfg.sweep.patch_size = int(line, key, v)?,
                "sweep.stride" => cfg.sweep.stride = int(line, key, v)?,
                "sweep.seed" => cfg.sweep.seed = int(line, key, v)?,
                "mws.alpha" => cfg.mws.alpha = real(line, key, v)?,
                "mws.min_segment" => cfg.mws.min_segment = int(line, key, v)?,
                "mws.alpha_grid" => cfg.alpha_grid = reals(line, key, v)?,
                _ => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.gen.validate()?;
        cfg.sweep.split.validate()?;
        if cfg.mws.alpha < 0.0 || cfg.alpha_grid.iter().any(|a| *a < 0.0) {
            return Err(Error::invalid("alpha values must be >= 0"));
        }
        Ok(cfg)
    }

    /// Replaces every seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gen.seed = seed;
        self.fit.seed = seed;
        self.sweep.seed = seed;
        self.sweep.split.seed = seed;
        self
    }

    /// Applies `IGMSEG_SEED` if it is set.
    pub fn with_env_seed(self) -> Result<Self> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed = v.trim().parse().map_err(|_| {
                    Error::invalid(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
                })?;
                Ok(self.with_seed(seed))
            }
            Err(_) => Ok(self),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::with_path(path, e))?;
        Self::parse(&text)?.with_env_seed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn sections_are_routed() {
        let cfg = PipelineConfig::parse(
            "# demo\ngen.count = 3\ngen.noise_variance=0.01\nsplit.smoothing_sigmas=\nsplit.schedule=fixed\nsweep.patch_size=64\nmws.alpha_grid=0.1, 0.2\nmodel.oracle_fov=12\n",
        )
        .unwrap();
        assert_eq!(cfg.gen.count, 3);
        assert_eq!(cfg.gen.params.noise_variance, 0.01);
        assert!(cfg.sweep.split.smoothing_sigmas.is_empty());
        assert_eq!(cfg.sweep.split.schedule, BandSchedule::Fixed);
        assert_eq!(cfg.sweep.patch_size, 64);
        assert_eq!(cfg.alpha_grid, vec![0.1, 0.2]);
        assert_eq!(cfg.oracle_fov, Some(12.0));
    }

    #[test]
    fn errors_name_the_line() {
        match PipelineConfig::parse("gen.count=2\ngen.colour=blue\n") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("gen.colour"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            PipelineConfig::parse("gen.count=x"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(PipelineConfig::parse("gen.count=1\ngen.count=2").is_err());
        assert!(PipelineConfig::parse("split.schedule=linear").is_err());
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let cfg = PipelineConfig::default().with_seed(42);
        assert_eq!(
            (cfg.gen.seed, cfg.fit.seed, cfg.sweep.seed, cfg.sweep.split.seed),
            (42, 42, 42, 42)
        );
    }
}
