//! The JSON run configuration and its validation.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ergo::certificate::{DissipativityConstants, GroupOrdering};
use ergo::chain::Generator;
use ergo::dynamics::{initial_point, InitialData, LinearFamily, ModelSpec, SimConfig};
use ergo::falsifier::FalsifierConfig;
use ergo::kernel::DelayKernel;
use ergo::segment::MarkedPoint;
use serde::{Deserialize, Serialize};

/// One configuration file. Every block is optional at parse time; each
/// subcommand states which blocks it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dense row-major generator matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<DelayKernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<LinearFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

/// Declared constants. `kappa`, `alpha`, `beta` and `gamma` may be omitted
/// when a `model` block is present; they are then derived from its coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    pub p: f64,
    pub p0: f64,
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub first: InitialData,
    #[serde(default)]
    pub regime: usize,
    /// Second starting point for coupled runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<InitialData>,
    #[serde(default)]
    pub second_regime: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub certify: CertifySpec,
    pub simulate: SimulateSpec,
    pub couple: CoupleSpec,
    pub expfunc: ExpfuncSpec,
    pub decay: DecaySpec,
    pub ot: OtSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySpec {
    /// Interior cut points of the range of `alpha`; empty means one group.
    pub cuts: Vec<f64>,
    pub ordering: GroupOrdering,
    /// The generator truncates a countable switching space.
    pub truncated: bool,
    /// Randomized check of the declared constants (needs a `model` block).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub falsifier: Option<FalsifierConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    /// Exponent of the summary curve `E‖X_t‖_r^p`; defaults to `constants.p`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_p: Option<f64>,
    /// Number of paths written in full to `paths.csv`.
    pub write_paths: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self { moment_p: None, write_paths: 10 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleSpec {
    /// Exponent of `E[d^p]`; defaults to `constants.p`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Decay fit window; defaults to `[T/6, T/2]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpfuncSpec {
    pub times: Vec<f64>,
    pub start: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Time at which `(1/t) log E[...]` is compared with `-zeta`.
    pub limit_time: f64,
}

impl Default for ExpfuncSpec {
    fn default() -> Self {
        Self { times: vec![0.5, 1.0, 2.0, 5.0], start: 0, n_paths: 200_000, seed: 0, limit_time: 100.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecaySpec {
    /// CSV with columns `t,mean,stderr`, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtSpec {
    pub times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

impl Default for OtSpec {
    fn default() -> Self {
        Self { times: vec![5.0, 10.0], p: None }
    }
}

/// A manifest written by a previous run; it can be passed back as `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

/// Parses a config file, or the `config` of a manifest. Errors carry the
/// path of the offending field.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let is_manifest = value.get("command").is_some() && value.get("config").is_some();
    let parse_err = |e: serde_path_to_error::Error<serde_json::Error>| {
        let at = e.path().to_string();
        anyhow!("{}: {}", if at == "." { "config".to_string() } else { at }, e.into_inner())
    };
    if is_manifest {
        let m: Manifest = serde_path_to_error::deserialize(value).map_err(parse_err)?;
        Ok(m.config)
    } else {
        serde_path_to_error::deserialize(value).map_err(parse_err)
    }
}

fn required<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| anyhow!("{name}: required"))
}

impl RunConfig {
    pub fn generator(&self) -> Result<Generator> {
        let rows = required(&self.generator, "generator")?;
        Generator::from_rows(rows).map_err(|e| anyhow!("generator: {e}"))
    }

    pub fn kernel(&self) -> Result<DelayKernel> {
        required(&self.kernel, "kernel").cloned()
    }

    pub fn sim(&self) -> Result<&SimConfig> {
        let sim = required(&self.sim, "sim")?;
        sim.validate().map_err(|e| anyhow!("sim: {e}"))?;
        Ok(sim)
    }

    fn family(&self) -> Result<Option<LinearFamily>> {
        self.model
            .clone()
            .map(|m| m.normalized().map_err(|e| anyhow!("model: {e}")))
            .transpose()
    }

    /// Declared constants, with omitted entries derived from the model.
    pub fn constants(&self) -> Result<DissipativityConstants> {
        let spec = required(&self.constants, "constants")?;
        let kernel = self.kernel()?;
        let derived = self.family()?.map(|f| f.derived_constants(&kernel, spec.r, spec.p, spec.p0));
        let pick = |name: &str| -> Result<&DissipativityConstants> {
            derived.as_ref().ok_or_else(|| anyhow!("constants.{name}: required (no model block to derive it from)"))
        };
        let c = DissipativityConstants {
            p: spec.p,
            p0: spec.p0,
            r: spec.r,
            kappa: match spec.kappa {
                Some(v) => v,
                None => pick("kappa")?.kappa,
            },
            alpha: match &spec.alpha {
                Some(v) => v.clone(),
                None => pick("alpha")?.alpha.clone(),
            },
            beta: match &spec.beta {
                Some(v) => v.clone(),
                None => match &derived {
                    Some(d) => d.beta.clone(),
                    None => vec![0.0; spec.alpha.as_ref().map_or(0, Vec::len)],
                },
            },
            gamma: match spec.gamma {
                Some(v) => v,
                None => derived.as_ref().map_or(0.0, |d| d.gamma),
            },
            kernel,
        };
        let n = self.generator()?.n_states();
        c.validate(n).map_err(|e| anyhow!("constants: {e}"))?;
        Ok(c)
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let family = self.family()?.ok_or_else(|| anyhow!("model: required"))?;
        let generator = self.generator()?;
        let constants = self.constants()?;
        ModelSpec::new(Arc::new(family), generator, constants).map_err(|e| anyhow!("model: {e}"))
    }

    /// The first (and, for coupled runs, second) initial marked point on the run grid.
    pub fn initial_points(&self, model: &ModelSpec, sim: &SimConfig, coupled: bool) -> Result<(MarkedPoint, Option<MarkedPoint>)> {
        let init = required(&self.init, "init")?;
        let grid = model.grid(sim).map_err(|e| anyhow!("sim: {e}"))?;
        let n = model.generator.n_states();
        let check = |k: usize, name: &str| {
            if k < n {
                Ok(())
            } else {
                Err(anyhow!("init.{name}: regime {k} out of range (generator has {n} states)"))
            }
        };
        check(init.regime, "regime")?;
        let first = initial_point(&grid, &init.first, init.regime).map_err(|e| anyhow!("init.first: {e}"))?;
        if !coupled {
            return Ok((first, None));
        }
        check(init.second_regime, "second_regime")?;
        let second = init.second.as_ref().ok_or_else(|| anyhow!("init.second: required"))?;
        let second = initial_point(&grid, second, init.second_regime).map_err(|e| anyhow!("init.second: {e}"))?;
        Ok((first, Some(second)))
    }

    /// Applies command-line overrides.
    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if o.seed.is_some() || o.paths.is_some() || o.horizon.is_some() || o.step.is_some() {
            if let Some(sim) = self.sim.as_mut() {
                if let Some(v) = o.seed {
                    sim.seed = v;
                }
                if let Some(v) = o.paths {
                    sim.n_paths = v;
                }
                if let Some(v) = o.horizon {
                    sim.horizon = v;
                }
                if let Some(v) = o.step {
                    sim.h = v;
                }
            } else if o.horizon.is_some() || o.step.is_some() {
                bail!("sim: required to apply --horizon or --step");
            }
        }
        if let Some(v) = o.seed {
            self.experiment.expfunc.seed = v;
        }
        if let Some(v) = o.paths {
            self.experiment.expfunc.n_paths = v;
        }
        Ok(())
    }

    /// Seed recorded in the manifest.
    pub fn seed(&self) -> u64 {
        self.sim.as_ref().map_or(self.experiment.expfunc.seed, |s| s.seed)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
}
