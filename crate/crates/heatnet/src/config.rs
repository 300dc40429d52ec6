//! Run configuration: command-line flags over a JSON file over defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::format::{open, FormatError};

/// Time grid `[t0, tf]` with `steps` equal pieces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t0: Option<f64>,
    pub tf: Option<f64>,
    pub steps: Option<usize>,
}

impl GridSection {
    fn or(self, other: GridSection) -> GridSection {
        GridSection {
            t0: self.t0.or(other.t0),
            tf: self.tf.or(other.tf),
            steps: self.steps.or(other.steps),
        }
    }
}

/// Lower bounds on the supply side, enforced by penalty in the stationary problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBoundsSection {
    /// C, every forward-pipe cell.
    pub min_supply_temperature: f64,
    /// Pa, both ends of every forward pipe.
    pub min_supply_pressure: f64,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
}

fn default_penalty() -> f64 {
    1e4
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupSection {
    pub steps: Option<usize>,
    pub tol: Option<f64>,
}

/// Every field is optional; unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub t0: Option<f64>,
    pub tf: Option<f64>,
    pub steps: Option<usize>,
    pub omega: Option<[f64; 3]>,
    pub reg: Option<[f64; 3]>,
    pub bounds: Option<[f64; 2]>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
    /// Per-command grids, used before the top-level one.
    #[serde(default)]
    pub simulate: GridSection,
    #[serde(default)]
    pub instopt: GridSection,
    #[serde(default)]
    pub optimize: GridSection,
    pub state_bounds: Option<StateBoundsSection>,
    #[serde(default)]
    pub warmup: WarmupSection,
    /// Step sizes of the convergence study.
    pub dts: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Instopt,
    Optimize,
    Verify,
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub network: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    pub out: PathBuf,
    pub t0: f64,
    pub tf: f64,
    pub steps: usize,
    pub omega: [f64; 3],
    pub reg: [f64; 3],
    pub bounds: [f64; 2],
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub state_bounds: Option<StateBoundsSection>,
    pub warmup_steps: usize,
    pub warmup_tol: f64,
    pub dts: Vec<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let mut cfg: RunConfig = serde_json::from_reader(std::io::BufReader::new(open(path)?))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.network, &mut cfg.demand, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// `self` wins over `lower` field by field.
    pub fn over(self, lower: RunConfig) -> RunConfig {
        RunConfig {
            network: self.network.or(lower.network),
            demand: self.demand.or(lower.demand),
            out: self.out.or(lower.out),
            t0: self.t0.or(lower.t0),
            tf: self.tf.or(lower.tf),
            steps: self.steps.or(lower.steps),
            omega: self.omega.or(lower.omega),
            reg: self.reg.or(lower.reg),
            bounds: self.bounds.or(lower.bounds),
            tol: self.tol.or(lower.tol),
            max_iter: self.max_iter.or(lower.max_iter),
            seed: self.seed.or(lower.seed),
            simulate: self.simulate.or(lower.simulate),
            instopt: self.instopt.or(lower.instopt),
            optimize: self.optimize.or(lower.optimize),
            state_bounds: self.state_bounds.or(lower.state_bounds),
            warmup: WarmupSection {
                steps: self.warmup.steps.or(lower.warmup.steps),
                tol: self.warmup.tol.or(lower.warmup.tol),
            },
            dts: self.dts.or(lower.dts),
        }
    }

    /// Resolves against the defaults. Top-level grid fields (set from flags)
    /// override the per-command section, which overrides a top-level grid
    /// from the file; `flags_grid` marks which top-level fields came from flags.
    pub fn resolve(&self, command: CommandKind, flags_grid: GridSection) -> Settings {
        let section = match command {
            CommandKind::Simulate => self.simulate,
            CommandKind::Instopt => self.instopt,
            CommandKind::Optimize | CommandKind::Verify => self.optimize,
        };
        let top = GridSection { t0: self.t0, tf: self.tf, steps: self.steps };
        let grid = flags_grid.or(section).or(top);
        Settings {
            network: self.network.clone(),
            demand: self.demand.clone(),
            out: self.out.clone().unwrap_or_else(|| PathBuf::from(".")),
            t0: grid.t0.unwrap_or(0.0),
            tf: grid.tf.unwrap_or(3600.0),
            steps: grid.steps.unwrap_or(100),
            omega: self.omega.unwrap_or([1e-4, 1e-3, 1e-1]),
            reg: self.reg.unwrap_or([1e-4; 3]),
            bounds: self.bounds.unwrap_or([0.0, 2e6]),
            tol: self.tol.unwrap_or(1e-4),
            max_iter: self.max_iter.unwrap_or(200),
            seed: self.seed.unwrap_or(0),
            state_bounds: self.state_bounds,
            warmup_steps: self.warmup.steps.unwrap_or(1),
            warmup_tol: self.warmup.tol.unwrap_or(1e-6),
            dts: self.dts.clone().unwrap_or_else(|| (4..=7).map(|k| 0.5f64.powi(k)).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: RunConfig = serde_json::from_str(
            r#"{"tol": 1e-3, "steps": 50, "instopt": {"tf": 86400, "steps": 500}, "omega": [1, 2, 3]}"#,
        )
        .unwrap();
        let flags = RunConfig { tol: Some(1e-6), ..Default::default() };
        let flags_grid = GridSection { steps: Some(7), ..Default::default() };
        let s = flags.over(file.clone()).resolve(CommandKind::Instopt, flags_grid);
        assert_eq!((s.tol, s.steps, s.tf), (1e-6, 7, 86400.0));
        assert_eq!(s.omega, [1.0, 2.0, 3.0]);
        assert_eq!(s.bounds, [0.0, 2e6]);
        let s = file.resolve(CommandKind::Optimize, GridSection::default());
        assert_eq!((s.steps, s.tf), (50, 3600.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"tolerance": 1}"#).is_err());
    }
}
