//! Run configuration: one JSON file per run, flags override file keys,
//! unknown keys rejected, and the effective config echoed to the output
//! directory.

use dscl_core::dsclaw::ModelParams;
use dscl_core::ensemble::{EntryLawKind, PotentialMode};
use dscl_core::measure::MeasureSpec;
use dscl_core::verify::{ExperimentConfig, ZGridSpec};
use dscl_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_tau() -> f64 {
    0.1
}
fn default_grid_points() -> usize {
    2001
}

/// Model block for the solver commands (density, edges, locations, sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: f64,
    pub q: f64,
    pub s: f64,
    pub n: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Domain half-width; None selects 3.5 + lambda.
    #[serde(default)]
    pub e0: Option<f64>,
    /// Entry law used by the sample command.
    #[serde(default)]
    pub law: Option<EntryLawKind>,
    /// Potential mode used by the sample command.
    #[serde(default)]
    pub v_mode: Option<PotentialMode>,
    /// Keep eigenvectors in the sample output.
    #[serde(default)]
    pub want_vectors: bool,
    /// Energy resolution of the density/locations sweeps.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl ModelSection {
    pub fn params(&self) -> Result<ModelParams> {
        let e0 = self.e0.unwrap_or(3.5 + self.lambda);
        ModelParams::with_domain(self.lambda, self.q, self.s, self.n, e0, self.tau)
    }
}

/// Experiment block: the experiment fields minus the measure and the seed,
/// which live at the top level of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_list: Vec<usize>,
    pub phi: f64,
    pub lambda: f64,
    pub law: EntryLawKind,
    pub replicas: usize,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub z_grid: Option<ZGridSpec>,
    #[serde(default)]
    pub v_mode: Option<PotentialMode>,
    #[serde(default)]
    pub varpi: Option<f64>,
    #[serde(default)]
    pub vartheta: Option<f64>,
    #[serde(default)]
    pub max_violation_fraction: Option<f64>,
    #[serde(default)]
    pub separation_factor: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
}

/// The whole run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub measure: MeasureSpec,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 means one per logical core.
    #[serde(default)]
    pub workers: usize,
}

/// Command-line overrides applied on top of the file keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub epsilon: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(workers) = overrides.workers {
            cfg.workers = workers;
        }
        if let Some(eps) = overrides.epsilon {
            if let Some(exp) = &mut cfg.experiment {
                exp.epsilon = Some(eps);
            }
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<&ModelSection> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a \"model\" section".into()))
    }

    /// Assemble the experiment configuration for the verify command.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let e = self
            .experiment
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs an \"experiment\" section".into()))?;
        let cfg = ExperimentConfig {
            n_list: e.n_list.clone(),
            phi: e.phi,
            lambda: e.lambda,
            nu: self.measure.clone(),
            law: e.law,
            replicas: e.replicas,
            epsilon: e.epsilon.unwrap_or(0.1),
            master_seed: self.seed,
            z_grid: e.z_grid.unwrap_or_default(),
            v_mode: e.v_mode,
            varpi: e.varpi.unwrap_or(dscl_core::dsclaw::DEFAULT_VARPI),
            vartheta: e.vartheta,
            max_violation_fraction: e.max_violation_fraction.unwrap_or(0.05),
            separation_factor: e.separation_factor.unwrap_or(1.0),
            tau: e.tau.unwrap_or(0.1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Echo the effective config into the output directory; the emitted JSON
    /// re-parses to an equal RunConfig.
    pub fn write_echo(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(
            self.out.join("config_echo.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let cfg = RunConfig {
            measure: MeasureSpec::TwoAtom { a: 1.0 },
            model: Some(ModelSection {
                lambda: 0.5,
                q: 10.0,
                s: 1.0,
                n: 500,
                tau: 0.1,
                e0: None,
                law: None,
                v_mode: None,
                want_vectors: false,
                grid_points: 2001,
            }),
            experiment: None,
            out: PathBuf::from("out"),
            seed: 42,
            workers: 0,
        };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"measure":{"kind":"two-atom","a":1.0},"bogus":1}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
        let text = r#"{"measure":{"kind":"two-atom","a":1.0,"b":2.0}}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }
}
