//! Pipeline settings resolved from three layers: command-line flags, a TOML
//! config file, and built-in defaults, in that order of precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::read_text;
use crate::itml::{default_gamma_grid, BoundPercentiles, ItmlConfig};
use crate::scoring::ScoreMode;

/// One layer of optional settings. Field names double as config-file keys.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub store: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub metric: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<Vec<f64>>,
    pub max_sweeps: Option<usize>,
    pub convergence_tol: Option<f64>,
    pub shuffle: Option<bool>,
    pub percentile_similar: Option<f64>,
    pub percentile_dissimilar: Option<f64>,
    pub mode: Option<String>,
    pub workers: Option<usize>,
    pub max_pairs: Option<usize>,
    pub margin: Option<f64>,
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($top:expr, $bottom:expr, $($f:ident),*) => {
        ConfigLayer { $($f: $top.$f.or($bottom.$f),)* }
    };
}

impl ConfigLayer {
    /// Parses a TOML file; relative paths are taken relative to its directory.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut layer: ConfigLayer =
            toml::from_str(text).map_err(|e| Error::format(base, e.message().to_string()))?;
        let dir = base.parent().unwrap_or(Path::new(""));
        for path in layer.paths_mut().into_iter().flatten() {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
        Ok(layer)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 9] {
        [
            &mut self.store,
            &mut self.constraints,
            &mut self.dev,
            &mut self.test,
            &mut self.gold,
            &mut self.targets,
            &mut self.metric,
            &mut self.scores,
            &mut self.out,
        ]
    }

    /// Fields set in `self` win over `below`.
    pub fn over(self, below: ConfigLayer) -> ConfigLayer {
        overlay!(
            self, below, store, constraints, dev, test, gold, targets, metric, scores, out, gamma,
            gamma_grid, max_sweeps, convergence_tol, shuffle, percentile_similar,
            percentile_dissimilar, mode, workers, max_pairs, margin, seed
        )
    }
}

/// Fully resolved settings. Paths stay optional; each subcommand demands
/// the ones it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub store: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub metric: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub itml: ItmlConfig,
    pub gamma_grid: Vec<f64>,
    pub percentiles: BoundPercentiles,
    /// Unset: use the metric file's own mode.
    pub mode: Option<ScoreMode>,
    pub workers: usize,
    pub max_pairs: Option<usize>,
    pub margin: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            store: None,
            constraints: None,
            dev: None,
            test: None,
            gold: None,
            targets: None,
            metric: None,
            scores: None,
            out: None,
            itml: ItmlConfig::default(),
            gamma_grid: default_gamma_grid(),
            percentiles: BoundPercentiles::default(),
            mode: None,
            workers: default_workers(),
            max_pairs: None,
            margin: 0.5,
            seed: 0,
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl PipelineConfig {
    /// `flags` over `file` over defaults.
    pub fn resolve(flags: ConfigLayer, file: Option<ConfigLayer>) -> Result<Self> {
        let layer = flags.over(file.unwrap_or_default());
        let d = PipelineConfig::default();
        let seed = layer.seed.unwrap_or(d.seed);
        let itml = ItmlConfig {
            gamma: layer.gamma.unwrap_or(d.itml.gamma),
            max_sweeps: layer.max_sweeps.unwrap_or(d.itml.max_sweeps),
            convergence_tol: layer.convergence_tol.unwrap_or(d.itml.convergence_tol),
            shuffle: layer.shuffle.unwrap_or(d.itml.shuffle),
            seed,
            ..d.itml
        };
        itml.validate()?;
        let percentiles = BoundPercentiles {
            similar: layer.percentile_similar.unwrap_or(d.percentiles.similar),
            dissimilar: layer.percentile_dissimilar.unwrap_or(d.percentiles.dissimilar),
        };
        for p in [percentiles.similar, percentiles.dissimilar] {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::Input(format!("percentile must lie in (0, 100], got {p}")));
            }
        }
        let gamma_grid = layer.gamma_grid.unwrap_or(d.gamma_grid);
        if gamma_grid.is_empty() || gamma_grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::Input("gamma grid must be non-empty and positive".into()));
        }
        let mode = layer.mode.map(|m| m.parse()).transpose()?;
        let workers = layer.workers.unwrap_or(d.workers);
        if workers == 0 {
            return Err(Error::Input("workers must be at least 1".into()));
        }
        let margin = layer.margin.unwrap_or(d.margin);
        if !(margin > 0.0 && margin < 2.0) {
            return Err(Error::Input(format!("margin must lie in (0, 2), got {margin}")));
        }
        if layer.max_pairs == Some(0) {
            return Err(Error::Input("max_pairs must be at least 1".into()));
        }
        let cfg = Self {
            store: layer.store,
            constraints: layer.constraints,
            dev: layer.dev,
            test: layer.test,
            gold: layer.gold,
            targets: layer.targets,
            metric: layer.metric,
            scores: layer.scores,
            out: layer.out,
            itml,
            gamma_grid,
            percentiles,
            mode,
            workers,
            max_pairs: layer.max_pairs,
            margin,
            seed,
        };
        cfg.check_inputs_exist()?;
        Ok(cfg)
    }

    fn check_inputs_exist(&self) -> Result<()> {
        let inputs = [
            &self.store,
            &self.constraints,
            &self.dev,
            &self.test,
            &self.gold,
            &self.targets,
            &self.metric,
            &self.scores,
        ];
        for p in inputs.into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Input(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Returns the path or a usage error naming the missing flag.
pub fn require_path<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Input(format!("missing required --{flag}")))
}

/// Parses `default` or a comma-separated list of positive numbers.
pub fn parse_gamma_grid(text: &str) -> Result<Vec<f64>> {
    if text.trim() == "default" {
        return Ok(default_gamma_grid());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("bad gamma value '{t}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_layer_precedence() {
        let file = ConfigLayer::parse("seed = 5\nworkers = 3\nmode = \"diagonal\"\n", Path::new("c.toml")).unwrap();
        let flags = ConfigLayer {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = PipelineConfig::resolve(flags, Some(file)).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.itml.seed, 9);
        assert_eq!(cfg.workers, 3);
        assert_eq!(cfg.mode, Some(ScoreMode::Diagonal));
        assert_eq!(cfg.margin, 0.5);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let file = ConfigLayer::parse("out = \"m.bin\"\n", Path::new("/tmp/x/c.toml")).unwrap();
        assert_eq!(file.out, Some(PathBuf::from("/tmp/x/m.bin")));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ConfigLayer::parse("colour = 1\n", Path::new("c")).is_err());
        let zero = ConfigLayer {
            workers: Some(0),
            ..Default::default()
        };
        assert!(PipelineConfig::resolve(zero, None).is_err());
        let missing = ConfigLayer {
            store: Some("/definitely/not/here.bin".into()),
            ..Default::default()
        };
        assert!(PipelineConfig::resolve(missing, None).is_err());
    }

    #[test]
    fn gamma_grid_text() {
        assert_eq!(parse_gamma_grid("default").unwrap().len(), 11);
        assert_eq!(parse_gamma_grid("0.1, 1").unwrap(), vec![0.1, 1.0]);
        assert!(parse_gamma_grid("x").is_err());
    }
}
