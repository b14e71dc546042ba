//! Experiment configuration (TOML, every key known, no silent defaults) and
//! initial-data construction.
//!
//! ```toml
//! seed = 7
//! rank = 2
//! fixed_det = false
//!
//! [grid]
//! N = 32
//! L = 1.0
//! stencil = "spectral"        # or "central"
//!
//! [initial]
//! kind = "random_smooth"      # k0, amplitude, tol
//! k0 = 1.0
//! amplitude = 0.3
//! tol = 1e-9
//! # kind = "split_plus_perturbation": block_degrees = [1, -1], extension_amplitude, c_re, c_im, tol
//! # kind = "from_snapshot": path
//!
//! [flow]
//! c_cfl = 0.1
//! t_max = 200.0
//! integrator = "rk4"
//! tol_grad = 1e-6
//! snapshot_every = 50
//! geometric_growth = 1.02
//! keep_snapshots = false
//! # fixed_dt = 1e-5          (optional)
//!
//! [outputs]
//! csv_path = "trajectory.csv"
//! snapshot_dir = "snapshots"
//! report_path = "report.json"
//! ```
//!
//! Relative output paths are resolved against the run's output directory.

use std::path::{Path, PathBuf};

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::fields::HiggsPair;
use crate::flow::FlowConfig;
use crate::geometry::{Stencil, TorusGrid};
use crate::{initial, snapshot};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub stencil: Stencil,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    RandomSmooth { k0: f64, amplitude: f64, tol: f64 },
    SplitPlusPerturbation { block_degrees: Vec<i64>, extension_amplitude: f64, c_re: f64, c_im: f64, tol: f64 },
    FromSnapshot { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub csv_path: PathBuf,
    pub snapshot_dir: PathBuf,
    pub report_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rank: usize,
    pub fixed_det: bool,
    pub grid: GridConfig,
    pub initial: InitialData,
    pub flow: FlowConfig,
    pub outputs: Outputs,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::Config(m.into()));
        if self.rank == 0 || self.rank > 8 {
            return bad("rank must be in 1..=8");
        }
        if self.grid.n < 4 || !(self.grid.l > 0.0) {
            return bad("grid needs N >= 4 and L > 0");
        }
        let f = &self.flow;
        if !(f.c_cfl > 0.0) || !(f.t_max >= 0.0) || !(f.tol_grad > 0.0) || f.snapshot_every == 0 || !(f.geometric_growth > 1.0) {
            return bad("flow needs c_cfl > 0, t_max >= 0, tol_grad > 0, snapshot_every >= 1, geometric_growth > 1");
        }
        if matches!(f.fixed_dt, Some(dt) if !(dt > 0.0)) {
            return bad("fixed_dt must be positive");
        }
        match &self.initial {
            InitialData::RandomSmooth { k0, amplitude, tol } => {
                if !(*k0 > 0.0) || !(*amplitude >= 0.0) || !(*tol > 0.0) {
                    return bad("random_smooth needs k0 > 0, amplitude >= 0, tol > 0");
                }
            }
            InitialData::SplitPlusPerturbation { block_degrees, extension_amplitude, tol, .. } => {
                if block_degrees.as_slice() != [1, -1] || self.rank != 2 {
                    return bad("split_plus_perturbation supports rank 2 with block_degrees = [1, -1]");
                }
                if (self.grid.l - 1.0).abs() > 1e-14 {
                    return bad("split_plus_perturbation needs L = 1");
                }
                if !(*extension_amplitude > 0.0) || !(*tol > 0.0) {
                    return bad("split_plus_perturbation needs extension_amplitude > 0 and tol > 0");
                }
            }
            InitialData::FromSnapshot { .. } => {}
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        Ok(TorusGrid::new(self.grid.n, self.grid.l)?.with_stencil(self.grid.stencil))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output path resolved against `out`.
    pub fn resolve(&self, out: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            out.join(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialReport {
    pub seed: u64,
    pub kind: String,
    /// seed actually used after retries
    pub effective_seed: Option<u64>,
    pub attempts: usize,
    pub kernel_dimension: Option<usize>,
    pub higgs_residual: f64,
}

/// Builds the initial pair. `kernel_samples > 0` also estimates dim ker d_A″.
pub fn make_initial(cfg: &ExperimentConfig, kernel_samples: usize) -> Result<(HiggsPair, InitialReport)> {
    let grid = cfg.grid()?;
    let (p, kind, effective_seed, attempts) = match &cfg.initial {
        InitialData::RandomSmooth { k0, amplitude, tol } => {
            let (p, info) = initial::random_smooth(grid, cfg.rank, cfg.fixed_det, cfg.seed, *k0, *amplitude, *tol)?;
            (p, "random_smooth", Some(info.seed), info.attempts)
        }
        InitialData::SplitPlusPerturbation { extension_amplitude, c_re, c_im, tol, .. } => {
            let base = initial::split_critical(grid, C::new(*c_re, *c_im))?;
            let p = initial::split_plus_perturbation(&base, *extension_amplitude, cfg.seed, *tol)?;
            (p, "split_plus_perturbation", Some(cfg.seed), 1)
        }
        InitialData::FromSnapshot { path } => {
            let (p, h) = snapshot::read(path)?;
            if h.n != cfg.grid.n || h.l != cfg.grid.l || h.r != cfg.rank {
                return Err(LabError::Config(format!(
                    "snapshot grid (N={}, L={}, r={}) does not match the config",
                    h.n, h.l, h.r
                )));
            }
            (p, "from_snapshot", h.seed, 1)
        }
    };
    let kernel_dimension = if kernel_samples > 0 {
        Some(initial::kernel_dimension(p.a2(), kernel_samples, cfg.seed, 1e-8)?)
    } else {
        None
    };
    let report = InitialReport {
        seed: cfg.seed,
        kind: kind.into(),
        effective_seed,
        attempts,
        kernel_dimension,
        higgs_residual: crate::fields::higgs_residual(&p),
    };
    Ok((p, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const SAMPLE: &str = r#"
seed = 7
rank = 2
fixed_det = false

[grid]
N = 16
L = 1.0
stencil = "spectral"

[initial]
kind = "random_smooth"
k0 = 1.0
amplitude = 0.0
tol = 1e-9

[flow]
c_cfl = 0.1
t_max = 1.0
integrator = "rk4"
tol_grad = 1e-6
snapshot_every = 50
geometric_growth = 1.02
keep_snapshots = false

[outputs]
csv_path = "trajectory.csv"
snapshot_dir = "snapshots"
report_path = "report.json"
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.grid.n, 16);
        assert_eq!(c.flow.fixed_dt, None);
        let back = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 8;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn unknown_and_missing_keys_are_errors() {
        let extra = SAMPLE.replace("tol_grad = 1e-6", "tol_grad = 1e-6\nbogus = 3");
        assert!(matches!(ExperimentConfig::parse(&extra), Err(LabError::Config(_))));
        let extra_init = SAMPLE.replace("k0 = 1.0", "k0 = 1.0\nwidth = 2");
        assert!(ExperimentConfig::parse(&extra_init).is_err());
        let missing = SAMPLE.replace("amplitude = 0.0\n", "");
        assert!(ExperimentConfig::parse(&missing).is_err());
        let bad_kind = SAMPLE.replace("random_smooth", "gaussian");
        assert!(ExperimentConfig::parse(&bad_kind).is_err());
    }

    #[test]
    fn zero_amplitude_gives_zero_pair() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        let (p, rep) = make_initial(&c, 0).unwrap();
        assert_eq!(p.max_diff(&HiggsPair::zero(c.grid().unwrap(), 2, false)), 0.0);
        assert_eq!(rep.seed, 7);
    }
}
