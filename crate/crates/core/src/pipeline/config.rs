//! TOML pipeline configuration.
//!
//! `[paths]` and `[seeds]` are required; every other section falls back to
//! the documented defaults and the resolved values are written to each run
//! manifest. Relative paths are taken relative to the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ingest::SplitReading;
use crate::availability::{SplitFractions, Stage1Config};
use crate::duration::Stage2Config;
use crate::error::{Error, Result};
use crate::features::EncodingOptions;
use crate::geo_cluster::{DispersionMetric, EARTH_RADIUS_KM};
use crate::series_gaf::{GadfForm, GafOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Delimited trace file.
    pub input: PathBuf,
    /// `key = value` schema file; the default schema when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// One ISO date per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holidays: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsConfig {
    pub cluster: u64,
    pub split: u64,
    pub stage1: u64,
    pub stage2: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Services with fewer records are dropped.
    pub min_count: usize,
    /// Drop exact duplicate rows.
    pub dedup: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_count: 50,
            dedup: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub reading: SplitReading,
    /// Only used with `reading = "custom"`.
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let f = SplitFractions::default();
        Self {
            reading: SplitReading::Nested,
            train: f.train,
            val: f.val,
            test: f.test,
        }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> SplitFractions {
        self.reading.fractions(SplitFractions {
            train: self.train,
            val: self.val,
            test: self.test,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Monte Carlo reference sets of the gap statistic.
    pub b: usize,
    /// Skip the gap statistic and use this k; 0 selects k by gap statistic.
    pub fixed_k: usize,
    /// Gap statistic on a seeded subsample of at most this many points; 0 uses all.
    pub max_points: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol_km: f64,
    pub metric: DispersionMetric,
    pub earth_radius_km: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_min: 1,
            k_max: 8,
            b: 10,
            fixed_k: 0,
            max_points: 2000,
            n_init: 4,
            max_iter: 100,
            tol_km: 1e-6,
            metric: DispersionMetric::Squared,
            earth_radius_km: EARTH_RADIUS_KM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesConfig {
    /// Window length k.
    pub window: usize,
    /// Stride r between window starts.
    pub stride: usize,
    /// Steps ahead γ.
    pub gamma: usize,
    pub granularity_s: u32,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            window: 32,
            stride: 4,
            gamma: 3,
            granularity_s: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GafConfig {
    pub perturb_eps: f64,
    /// PAA target length; 0 keeps the full window.
    pub paa: usize,
    pub gadf_form: GadfForm,
    /// Render this many training pairs as PNG files.
    pub png_count: usize,
}

impl Default for GafConfig {
    fn default() -> Self {
        let o = GafOptions::default();
        Self {
            perturb_eps: o.perturb_eps,
            paa: 0,
            gadf_form: o.gadf_form,
            png_count: 0,
        }
    }
}

impl GafConfig {
    pub fn options(&self) -> GafOptions {
        GafOptions {
            perturb_eps: self.perturb_eps,
            paa: (self.paa > 0).then_some(self.paa),
            gadf_form: self.gadf_form,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub seeds: SeedsConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub encoding: EncodingOptions,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub series: SeriesConfig,
    #[serde(default)]
    pub gaf: GafConfig,
    #[serde(default)]
    pub stage2: Stage2Config,
}

impl PipelineConfig {
    /// Parses, resolves relative paths against `base` and copies the seeds and
    /// split fractions into the stage configs.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string().trim().replace('\n', " ")))?;
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut cfg.paths.input);
        abs(&mut cfg.paths.output_dir);
        if let Some(p) = cfg.paths.schema.as_mut() {
            abs(p);
        }
        if let Some(p) = cfg.paths.holidays.as_mut() {
            abs(p);
        }
        cfg.stage1.seed = cfg.seeds.stage1;
        cfg.stage2.seed = cfg.seeds.stage2;
        cfg.stage1.fractions = cfg.split.fractions();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.cluster;
        if c.k_min == 0 || c.k_min > c.k_max || c.b == 0 {
            return Err(Error::config(format!(
                "cluster k range {}..={} with B = {} is invalid",
                c.k_min, c.k_max, c.b
            )));
        }
        self.split.fractions().validate()?;
        if self.ingest.min_count == 0 {
            return Err(Error::config("ingest.min_count must be at least 1"));
        }
        let s = &self.series;
        if s.window == 0 || s.stride == 0 || s.granularity_s == 0 {
            return Err(Error::config("series window, stride and granularity must be positive"));
        }
        if s.gamma != self.stage2.gamma {
            return Err(Error::config(format!(
                "series.gamma = {} differs from stage2.gamma = {}",
                s.gamma, self.stage2.gamma
            )));
        }
        let side = self.gaf.options().paa.unwrap_or(s.window);
        if side != self.stage2.input_size {
            return Err(Error::config(format!(
                "GAF images are {side}x{side} but stage2.input_size = {}",
                self.stage2.input_size
            )));
        }
        self.stage1.validate()?;
        self.stage2.validate()
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "[paths]\ninput = \"trace.csv\"\noutput_dir = \"out\"\n\
        [seeds]\ncluster = 1\nsplit = 2\nstage1 = 3\nstage2 = 4\n";

    #[test]
    fn defaults_and_resolution() {
        let cfg = PipelineConfig::parse(MIN, Path::new("/data")).unwrap();
        assert_eq!(cfg.paths.input, PathBuf::from("/data/trace.csv"));
        assert_eq!(cfg.ingest.min_count, 50);
        assert_eq!(cfg.series.window, 32);
        assert_eq!(cfg.series.stride, 4);
        assert_eq!(cfg.stage1.seed, 3);
        assert_eq!(cfg.stage2.seed, 4);
        assert_eq!(cfg.gaf.options().paa, None);
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::parse(&text, Path::new("/elsewhere")).unwrap(), cfg);
    }

    #[test]
    fn seeds_are_required_and_unknown_keys_rejected() {
        let no_seeds = "[paths]\ninput = \"a\"\noutput_dir = \"b\"\n";
        assert!(matches!(PipelineConfig::parse(no_seeds, Path::new("")), Err(Error::Config(_))));
        let typo = format!("{MIN}[stage1]\nlearnig_rate = 0.1\n");
        assert!(PipelineConfig::parse(&typo, Path::new("")).is_err());
    }

    #[test]
    fn inconsistent_sections() {
        let g = format!("{MIN}[series]\ngamma = 2\n");
        assert!(PipelineConfig::parse(&g, Path::new("")).unwrap_err().to_string().contains("gamma"));
        let paa = format!("{MIN}[gaf]\npaa = 16\n");
        assert!(PipelineConfig::parse(&paa, Path::new("")).unwrap_err().to_string().contains("input_size"));
        let split = format!("{MIN}[split]\nreading = \"of_total\"\n");
        let cfg = PipelineConfig::parse(&split, Path::new("")).unwrap();
        assert_eq!(cfg.split.fractions().val, 0.10);
    }
}
