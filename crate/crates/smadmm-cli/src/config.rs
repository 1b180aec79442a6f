//! Experiment configuration. Structured keys with strict parsing: unknown
//! keys are errors, not warnings, since a silently ignored hyperparameter
//! invalidates an experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub schedule: ScheduleConfig,
    pub run: RunConfig,
    pub algorithms: Vec<AlgorithmConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    FusedLasso {
        dataset: PathBuf,
        /// Optional held-out set; when absent and `split_half` is set, the
        /// training file is split in two deterministically.
        #[serde(default)]
        test_dataset: Option<PathBuf>,
        #[serde(default)]
        split_half: bool,
        #[serde(default = "default_lambda1")]
        lambda1: f64,
        #[serde(default = "default_corr_threshold")]
        corr_threshold: f64,
        #[serde(default)]
        normalize: bool,
    },
    Synthetic {
        n: usize,
        #[serde(default)]
        sigma: f64,
        convexity: ConvexityConfig,
        #[serde(default = "default_problem_seed")]
        problem_seed: u64,
        #[serde(default = "default_reg_weight")]
        reg_weight: f64,
    },
}

fn default_lambda1() -> f64 {
    1e-11
}
fn default_corr_threshold() -> f64 {
    0.7
}
fn default_problem_seed() -> u64 {
    7
}
fn default_reg_weight() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityConfig {
    ConvexQuadratic,
    NonconvexSigmoid,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "regime", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// Theory constants for a fixed horizon; pairs with the exact x-update.
    Constant,
    /// Theory constants with per-iteration growth; pairs with the exact
    /// x-update.
    Dynamic,
    /// Hand-tuned parameters.
    Practical {
        rho: f64,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        eta_coeff: Option<f64>,
        #[serde(default)]
        eta_cap: Option<f64>,
        #[serde(default)]
        momentum: Option<f64>,
        #[serde(default)]
        momentum_coeff: Option<f64>,
        #[serde(default)]
        momentum_floor: Option<f64>,
        #[serde(default = "default_init_batch")]
        init_batch: usize,
    },
}

fn default_init_batch() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// smadmm | sadmm | svrg_admm | spider_admm | asvrg_admm
    pub name: String,
    /// Per-iteration sample batch (pairs where the estimator uses pairs).
    #[serde(default = "default_run_batch")]
    pub batch: usize,
    #[serde(default)]
    pub epoch_len: Option<usize>,
    #[serde(default)]
    pub epoch_batch: Option<usize>,
    #[serde(default)]
    pub extrapolation: Option<f64>,
    /// Overrides run.iterations; lets algorithms with different
    /// per-iteration costs meet at an equal query budget.
    #[serde(default)]
    pub iterations: Option<usize>,
}

fn default_run_batch() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    #[serde(default = "default_x_update")]
    pub x_update: XUpdateConfig,
    #[serde(default = "default_diag_interval")]
    pub diag_interval: usize,
    #[serde(default = "default_grad_mode")]
    pub grad_mode: GradModeConfig,
    #[serde(default = "default_grad_batch")]
    pub grad_batch: usize,
    /// Margin of the y-metric H = rho (||B||^2 + margin) I - rho B'B. Theory
    /// schedules are sensitive to it through sigma(H).
    #[serde(default = "default_metric_margin")]
    pub metric_margin: f64,
    /// Initial points; zero vectors when omitted.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda0: Option<Vec<f64>>,
}

fn default_metric_margin() -> f64 {
    0.05
}

fn default_x_update() -> XUpdateConfig {
    XUpdateConfig::Linearized
}
fn default_diag_interval() -> usize {
    10
}
fn default_grad_mode() -> GradModeConfig {
    GradModeConfig::LargeBatch
}
fn default_grad_batch() -> usize {
    1000
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum XUpdateConfig {
    Linearized,
    Exact,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GradModeConfig {
    Exact,
    Surrogate,
    LargeBatch,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.run.seeds.is_empty() {
            return Err("run.seeds must be nonempty".into());
        }
        if self.run.iterations == 0 {
            return Err("run.iterations must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return Err("at least one algorithm is required".into());
        }
        for alg in &self.algorithms {
            match alg.name.as_str() {
                "smadmm" | "sadmm" => {}
                "svrg_admm" | "asvrg_admm" | "spider_admm" => {
                    if alg.epoch_len.is_none() {
                        return Err(format!("{} requires epoch_len", alg.name));
                    }
                    if alg.name == "spider_admm" && alg.epoch_batch.is_none() {
                        return Err("spider_admm requires epoch_batch".into());
                    }
                }
                other => return Err(format!("unknown algorithm '{other}'")),
            }
        }
        if let ProblemConfig::FusedLasso {
            dataset,
            test_dataset,
            ..
        } = &self.problem
        {
            if !dataset.exists() {
                return Err(format!("dataset path {} does not exist", dataset.display()));
            }
            if let Some(t) = test_dataset {
                if !t.exists() {
                    return Err(format!("test dataset path {} does not exist", t.display()));
                }
            }
        }
        if let ScheduleConfig::Practical {
            rho,
            eta,
            eta_coeff,
            eta_cap,
            momentum,
            momentum_coeff,
            ..
        } = &self.schedule
        {
            if *rho <= 0.0 {
                return Err("schedule.rho must be positive".into());
            }
            let eta_given = eta.is_some() || (eta_coeff.is_some() && eta_cap.is_some());
            if !eta_given {
                return Err("practical schedule needs eta or (eta_coeff, eta_cap)".into());
            }
            let mom_given = momentum.is_some() || momentum_coeff.is_some();
            if !mom_given {
                return Err("practical schedule needs momentum or momentum_coeff".into());
            }
        }
        match (&self.schedule, self.run.x_update) {
            (ScheduleConfig::Constant | ScheduleConfig::Dynamic, XUpdateConfig::Linearized) => {
                Err("theory schedules pair with x_update = \"exact\": the \
                     derived step coefficient does not keep the linearized \
                     metric positive definite"
                    .into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [problem]
        kind = "synthetic"
        n = 10
        convexity = "convex_quadratic"

        [schedule]
        regime = "practical"
        rho = 1.0
        eta = 3.0
        momentum = 0.5

        [run]
        iterations = 100
        seeds = [1, 2]
        output = "out/test"

        [[algorithms]]
        name = "smadmm"
    "#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.run.seeds, vec![1, 2]);
        assert_eq!(c.algorithms[0].name, "smadmm");
        assert_eq!(c.run.diag_interval, 10);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = MINIMAL.replace("[run]", "[run]\nbogus_knob = 3");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.contains("bogus_knob"), "{err}");
    }

    #[test]
    fn empty_seeds_rejected() {
        let bad = MINIMAL.replace("seeds = [1, 2]", "seeds = []");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn spider_requires_epoch_batch() {
        let bad = MINIMAL.replace("name = \"smadmm\"", "name = \"spider_admm\"\nepoch_len = 10");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.contains("epoch_batch"), "{err}");
    }

    #[test]
    fn theory_schedule_demands_exact_updates() {
        let bad = MINIMAL.replace(
            "regime = \"practical\"\n        rho = 1.0\n        eta = 3.0\n        momentum = 0.5",
            "regime = \"dynamic\"",
        );
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.contains("exact"), "{err}");
        let good = bad.replace("output = \"out/test\"", "output = \"out/test\"\nx_update = \"exact\"");
        ExperimentConfig::from_toml(&good).unwrap();
    }

    #[test]
    fn round_trip_is_field_identical() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let text = toml::to_string(&c).unwrap();
        let c2 = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c, c2);
    }
}
