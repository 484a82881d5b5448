//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use setcf::dgp::{self, DgpConfig};
use setcf::identify::{Binning, Constraints, GridSpec, Kappa, Method, Schema};
use setcf::model::{ModelSpec, ThetaPoint};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Column roles; defaults to the simulated layout.
    #[serde(default)]
    pub schema: Option<Schema>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub binning: Binning,
    #[serde(default)]
    pub identify: IdentifyConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub ci: CiConfig,
    #[serde(default)]
    pub containment: ContainmentConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Observable CSV; defaults to `dataset.csv` in the output directory.
    #[serde(default)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub theta: ThetaPoint,
    #[serde(default)]
    pub z_values: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub x_values: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub v_values: Option<Vec<f64>>,
    #[serde(default)]
    pub p_s: Option<f64>,
    #[serde(default)]
    pub noise_sd: Option<f64>,
    #[serde(default)]
    pub interval_width: Option<f64>,
    /// Also write the latent sidecar.
    #[serde(default)]
    pub latent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    /// Fixed slack; when absent, `slack_se` times the largest cell standard error.
    #[serde(default)]
    pub slack: Option<f64>,
    #[serde(default = "two")]
    pub slack_se: f64,
    /// Tolerance on point-identified selection indices; defaults to the slack.
    #[serde(default)]
    pub pi_slack: Option<f64>,
    /// Comma list of `mts`, `mtr`.
    #[serde(default = "none")]
    pub constraints: String,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default = "default_draws")]
    pub mc_draws: usize,
    #[serde(default)]
    pub mc_seed: u64,
}

fn two() -> f64 {
    2.0
}

fn none() -> String {
    "none".into()
}

fn default_draws() -> usize {
    20_000
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            slack: None,
            slack_se: two(),
            pi_slack: None,
            constraints: none(),
            method: None,
            mc_draws: default_draws(),
            mc_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "default_functionals")]
    pub functionals: Vec<Kappa>,
}

fn default_functionals() -> Vec<Kappa> {
    vec![
        Kappa::Asf { d: 0.0, x0: None },
        Kappa::Asf { d: 1.0, x0: None },
        Kappa::Ate { x0: None },
        Kappa::Switch { x0: None },
    ]
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            functionals: default_functionals(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ci_functional")]
    pub functional: Kappa,
    #[serde(default = "default_draws")]
    pub mc_draws: usize,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_k() -> usize {
    200
}

fn default_ci_functional() -> Kappa {
    Kappa::Asf { d: 1.0, x0: None }
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            k: default_k(),
            seed: 0,
            functional: default_ci_functional(),
            mc_draws: default_draws(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ContainmentConfig {
    /// Parameter to tabulate; defaults to the simulation truth.
    #[serde(default)]
    pub theta: Option<ThetaPoint>,
    /// Events as lists of support indices; defaults to every proper subset.
    #[serde(default)]
    pub events: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub mc_seed: u64,
    #[serde(default)]
    pub mc_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub slack: Option<f64>,
    pub alpha: Option<f64>,
    pub grid_k: Option<usize>,
    pub constraints: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path, o: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // relative data paths are taken from the config's directory
        if let (Some(input), Some(base)) = (cfg.data.input.as_mut(), path.parent()) {
            if input.is_relative() {
                *input = base.join(&*input);
            }
        }
        cfg.apply(o);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            if let Some(sim) = self.simulate.as_mut() {
                sim.seed = s;
            }
            self.ci.seed = s;
        }
        if let Some(s) = o.slack {
            self.identify.slack = Some(s);
        }
        if let Some(a) = o.alpha {
            self.ci.alpha = a;
        }
        if let Some(k) = o.grid_k {
            self.ci.k = k;
        }
        if let Some(c) = &o.constraints {
            self.identify.constraints = c.clone();
        }
        if let Some(d) = &o.out_dir {
            self.output.dir = d.clone();
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Err(e) = self.model.validate() {
            return bad(format!("model: {e}"));
        }
        if !(self.ci.alpha > 0.0 && self.ci.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.ci.alpha));
        }
        if self.ci.k < 2 {
            return bad("grid-k must be at least 2".into());
        }
        if let Some(s) = self.identify.slack {
            if !(s >= 0.0) {
                return bad(format!("slack = {s} must be nonnegative"));
            }
        }
        self.constraints()?;
        if let Some(g) = &self.grid {
            if g.mu.iter().chain(&g.rho).any(Vec::is_empty) || g.pi.iter().any(|(_, v)| v.is_empty()) {
                return bad("every grid axis needs at least one value".into());
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if let Some(sim) = &self.simulate {
            self.dgp(sim).validate().map_err(|e| CliError::Config(format!("simulate: {e}")))?;
        }
        Ok(())
    }

    pub fn constraints(&self) -> Result<Constraints, CliError> {
        self.identify
            .constraints
            .parse()
            .map_err(|e| CliError::Config(format!("constraints: {e}")))
    }

    pub fn dgp(&self, sim: &SimulateConfig) -> DgpConfig {
        let mut c = DgpConfig::new(self.model.clone(), sim.theta.clone(), sim.n, sim.seed);
        if let Some(z) = &sim.z_values {
            c.z_values = z.clone();
        }
        if let Some(x) = &sim.x_values {
            c.x_values = x.clone();
        }
        c.v_values = sim.v_values.clone();
        if let Some(p) = sim.p_s {
            c.p_s = p;
        }
        if let Some(s) = sim.noise_sd {
            c.noise_sd = s;
        }
        if let Some(w) = sim.interval_width {
            c.interval_width = w;
        }
        c
    }

    /// Declared schema, or the layout `simulate` writes.
    pub fn schema(&self) -> Result<Schema, CliError> {
        if let Some(s) = &self.schema {
            return Ok(s.clone());
        }
        let sim = self
            .simulate
            .as_ref()
            .ok_or_else(|| CliError::Config("no [schema] and no [simulate] section to derive one from".into()))?;
        let c = self.dgp(sim);
        Ok(dgp::default_schema(&self.model, c.z_values[0].len(), c.x_values[0].len()))
    }

    pub fn data_path(&self) -> PathBuf {
        self.data
            .input
            .clone()
            .unwrap_or_else(|| self.output.dir.join("dataset.csv"))
    }
}
