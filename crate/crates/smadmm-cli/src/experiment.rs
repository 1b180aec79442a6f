//! Experiment orchestration: instantiate the configured problem once per
//! (algorithm, seed) pair, run the pairs on worker threads, then serialize
//! traces, a merged summary and epoch-aggregated curves through a single
//! collector. Identical configs produce bitwise-identical trace and curve
//! files; only the wall-time fields of the summary vary.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use smadmm::baselines::EstimatorVariant;
use smadmm::kkt::GradMode;
use smadmm::linops;
use smadmm::problems::{
    self, fused_lasso_problem, mean_sigmoid_loss, parse_libsvm, zero_one_error, Convexity,
    Dataset,
};
use smadmm::schedules::{
    constant_schedule, dynamic_schedule, EtaRule, MomentumRule, PracticalSchedule, Regime,
    Schedule, ScheduleConstants, SpectralInputs,
};
use smadmm::solver::{self, Problem, ProxMetric, QMetric, RunOptions, RunStatus, XUpdate};

use crate::config::{
    AlgorithmConfig, ConvexityConfig, ExperimentConfig, GradModeConfig, ProblemConfig,
    ScheduleConfig, XUpdateConfig,
};

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub status: String,
    pub best_k: Option<usize>,
    pub best_kkt: Option<f64>,
    pub total_queries: u64,
    pub diagnostic_queries: u64,
    pub final_objective: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmAggregate {
    pub algorithm: String,
    pub mean_best_kkt: Option<f64>,
    pub mean_final_objective: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub iterations: usize,
    pub epoch_queries: u64,
    pub partial: bool,
    /// Schedule as resolved for this experiment: the practical parameters,
    /// or the constants derived from the problem's spectral quantities.
    pub schedule: serde_json::Value,
    pub runs: Vec<RunSummary>,
    pub aggregates: Vec<AlgorithmAggregate>,
}

pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub summary: Summary,
}

/// One evaluated point of a per-run learning curve.
#[derive(Debug, Clone)]
struct CurvePoint {
    epoch: usize,
    queries: u64,
    objective: f64,
    test_loss: f64,
    error_rate: f64,
}

struct RunArtifacts {
    summary: RunSummary,
    trace_csv: Vec<u8>,
    curve: Vec<CurvePoint>,
}

struct Instantiated {
    problem: Problem,
    lipschitz: f64,
    edges: usize,
    reg_weight: f64,
}

/// Problem family realized once; `instantiate` builds a fresh problem with
/// its own oracle stream per run.
enum Family {
    FusedLasso {
        train: Arc<Dataset>,
        test: Option<Arc<Dataset>>,
        lambda1: f64,
        corr_threshold: f64,
    },
    Synthetic {
        n: usize,
        data_seed: u64,
        sigma: f64,
        convexity: Convexity,
        reg_weight: f64,
    },
}

impl Family {
    fn build(cfg: &ProblemConfig) -> Result<Self, String> {
        match cfg {
            ProblemConfig::FusedLasso {
                dataset,
                test_dataset,
                split_half,
                lambda1,
                corr_threshold,
                normalize,
            } => {
                let file = fs::File::open(dataset)
                    .map_err(|e| format!("cannot open {}: {e}", dataset.display()))?;
                let mut train = parse_libsvm(BufReader::new(file))
                    .map_err(|e| format!("{}: {e}", dataset.display()))?;
                if *normalize {
                    train.normalize_min_max();
                }
                let (train, test) = match (test_dataset, split_half) {
                    (Some(path), _) => {
                        let file = fs::File::open(path)
                            .map_err(|e| format!("cannot open {}: {e}", path.display()))?;
                        let mut test = parse_libsvm(BufReader::new(file))
                            .map_err(|e| format!("{}: {e}", path.display()))?;
                        if *normalize {
                            test.normalize_min_max();
                        }
                        // feature spaces must agree
                        let width = train.n_features.max(test.n_features);
                        train.n_features = width;
                        test.n_features = width;
                        (train, Some(test))
                    }
                    (None, true) => {
                        let (a, b) = train.split_half(0x5EED);
                        (a, Some(b))
                    }
                    (None, false) => (train, None),
                };
                Ok(Family::FusedLasso {
                    train: Arc::new(train),
                    test: test.map(Arc::new),
                    lambda1: *lambda1,
                    corr_threshold: *corr_threshold,
                })
            }
            ProblemConfig::Synthetic {
                n,
                sigma,
                convexity,
                problem_seed,
                reg_weight,
            } => Ok(Family::Synthetic {
                n: *n,
                data_seed: *problem_seed,
                sigma: *sigma,
                convexity: match convexity {
                    ConvexityConfig::ConvexQuadratic => Convexity::ConvexQuadratic,
                    ConvexityConfig::NonconvexSigmoid => Convexity::NonconvexSigmoid,
                },
                reg_weight: *reg_weight,
            }),
        }
    }

    fn instantiate(&self, oracle_seed: u64) -> Result<Instantiated, String> {
        match self {
            Family::FusedLasso {
                train,
                lambda1,
                corr_threshold,
                ..
            } => {
                let fl = fused_lasso_problem(
                    train.as_ref().clone(),
                    *lambda1,
                    *corr_threshold,
                    oracle_seed,
                )
                .map_err(|e| e.to_string())?;
                Ok(Instantiated {
                    problem: fl.problem,
                    lipschitz: fl.lipschitz,
                    edges: fl.edges,
                    reg_weight: *lambda1,
                })
            }
            Family::Synthetic {
                n,
                data_seed,
                sigma,
                convexity,
                reg_weight,
            } => {
                let s = problems::synthetic_composite_seeded(
                    *n,
                    *data_seed,
                    oracle_seed,
                    *sigma,
                    *convexity,
                    *reg_weight,
                )
                .map_err(|e| e.to_string())?;
                Ok(Instantiated {
                    problem: s.problem,
                    lipschitz: s.lipschitz,
                    edges: 0,
                    reg_weight: *reg_weight,
                })
            }
        }
    }

    fn test_set(&self) -> Option<Arc<Dataset>> {
        match self {
            Family::FusedLasso { test, .. } => test.clone(),
            Family::Synthetic { .. } => None,
        }
    }

    fn epoch_queries(&self, iterations: usize) -> u64 {
        match self {
            Family::FusedLasso { train, .. } => train.len() as u64,
            Family::Synthetic { n, convexity, .. } => match convexity {
                Convexity::NonconvexSigmoid => (4 * (*n).max(25)) as u64,
                Convexity::ConvexQuadratic => ((2 * iterations / 20).max(1)) as u64,
            },
        }
    }
}

fn build_schedule(
    cfg: &ScheduleConfig,
    problem: &Problem,
    lipschitz: f64,
    iterations: usize,
) -> Result<Schedule, String> {
    match cfg {
        ScheduleConfig::Practical {
            rho,
            eta,
            eta_coeff,
            eta_cap,
            momentum,
            momentum_coeff,
            momentum_floor,
            init_batch,
        } => {
            let eta_rule = match (eta, eta_coeff, eta_cap) {
                (Some(v), _, _) => EtaRule::Fixed(*v),
                (None, Some(c), Some(cap)) => EtaRule::PowerCapped {
                    coeff: *c,
                    cap: *cap,
                },
                _ => return Err("practical schedule needs eta or (eta_coeff, eta_cap)".into()),
            };
            let momentum_rule = match (momentum, momentum_coeff) {
                (Some(v), _) => MomentumRule::Fixed(*v),
                (None, Some(c)) => MomentumRule::PowerFloored {
                    coeff: *c,
                    floor: momentum_floor.unwrap_or(0.01),
                },
                _ => return Err("practical schedule needs momentum or momentum_coeff".into()),
            };
            Schedule::practical(PracticalSchedule {
                rho: *rho,
                eta: eta_rule,
                momentum: momentum_rule,
                init_batch: *init_batch,
            })
            .map_err(|e| e.to_string())
        }
        ScheduleConfig::Constant | ScheduleConfig::Dynamic => {
            let sigma_a =
                linops::smallest_gram_eigenvalue(&problem.a_map).map_err(|e| e.to_string())?;
            let norm_a = linops::operator_norm(&problem.a_map).map_err(|e| e.to_string())?;
            let norm_b = linops::operator_norm(&problem.b_map).map_err(|e| e.to_string())?;
            let (h_min, h_max) = problem.metric_extremes(1.0);
            let spec = SpectralInputs {
                sigma_a,
                phi_min: 1.0,
                phi_max: 1.0,
                sigma_min_h: h_min,
                sigma_max_h: h_max,
                norm_a,
                norm_b,
            };
            let regime = if matches!(cfg, ScheduleConfig::Constant) {
                Regime::Constant
            } else {
                Regime::Dynamic
            };
            let consts =
                ScheduleConstants::derive(lipschitz, spec, regime).map_err(|e| e.to_string())?;
            match regime {
                Regime::Constant => {
                    constant_schedule(consts, iterations).map_err(|e| e.to_string())
                }
                Regime::Dynamic => Ok(dynamic_schedule(consts)),
            }
        }
    }
}

fn grad_mode(cfg: &ExperimentConfig) -> GradMode {
    match cfg.run.grad_mode {
        GradModeConfig::Exact => GradMode::Exact,
        GradModeConfig::Surrogate => GradMode::SurrogateV,
        GradModeConfig::LargeBatch => GradMode::LargeBatch(cfg.run.grad_batch),
    }
}

fn execute_run(
    cfg: &ExperimentConfig,
    family: &Family,
    alg: &AlgorithmConfig,
    seed: u64,
) -> Result<RunArtifacts, String> {
    let Instantiated {
        mut problem,
        lipschitz,
        ..
    } = family.instantiate(seed)?;
    problem.metric = ProxMetric::Margin(cfg.run.metric_margin);
    let iterations = alg.iterations.unwrap_or(cfg.run.iterations);
    let schedule = build_schedule(&cfg.schedule, &problem, lipschitz, iterations)?;
    let options = RunOptions {
        x_update: match cfg.run.x_update {
            XUpdateConfig::Linearized => XUpdate::Linearized,
            XUpdateConfig::Exact => XUpdate::Exact(QMetric::Identity),
        },
        x0: cfg.run.x0.clone(),
        y0: cfg.run.y0.clone(),
        lambda0: cfg.run.lambda0.clone(),
        diag_interval: cfg.run.diag_interval,
        grad_mode: grad_mode(cfg),
        estimator_batch: alg.batch,
        snapshot_queries: Some(family.epoch_queries(cfg.run.iterations)),
        ..RunOptions::default()
    };
    let out = match alg.name.as_str() {
        "smadmm" => solver::run(&mut problem, &schedule, iterations, &options),
        name => {
            let variant = match name {
                "sadmm" => EstimatorVariant::Plain { batch: alg.batch },
                "svrg_admm" => EstimatorVariant::Svrg {
                    epoch_len: alg.epoch_len.unwrap(),
                    batch: alg.batch,
                },
                "spider_admm" => EstimatorVariant::Spider {
                    epoch_len: alg.epoch_len.unwrap(),
                    epoch_batch: alg.epoch_batch.unwrap(),
                    batch: alg.batch,
                },
                "asvrg_admm" => EstimatorVariant::Asvrg {
                    epoch_len: alg.epoch_len.unwrap(),
                    batch: alg.batch,
                    extrapolation: alg.extrapolation.unwrap_or(0.5),
                },
                other => return Err(format!("unknown algorithm '{other}'")),
            };
            let mut estimator = variant.build(&problem.oracle).map_err(|e| e.to_string())?;
            solver::run_with_estimator(
                &mut problem,
                &schedule,
                iterations,
                &options,
                estimator.as_mut(),
            )
        }
    }
    .map_err(|e| e.to_string())?;

    // learning-curve samples at the recorded epoch boundaries
    let test = family.test_set();
    let mut curve = Vec::new();
    for snap in &out.epoch_snapshots {
        let objective = problem.composite_objective(&snap.x).unwrap_or(f64::NAN);
        let (test_loss, error_rate) = match &test {
            Some(ds) => (mean_sigmoid_loss(ds, &snap.x), zero_one_error(ds, &snap.x)),
            None => (f64::NAN, f64::NAN),
        };
        curve.push(CurvePoint {
            epoch: snap.epoch as usize,
            queries: snap.queries,
            objective,
            test_loss,
            error_rate,
        });
    }

    let mut trace_csv = Vec::new();
    out.trace
        .write_csv(&mut trace_csv)
        .map_err(|e| e.to_string())?;

    let status = match out.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Diverged { iteration } => format!("diverged@{iteration}"),
    };
    let final_objective = out
        .trace
        .rows
        .iter()
        .rev()
        .map(|r| r.objective)
        .find(|o| o.is_finite());
    Ok(RunArtifacts {
        summary: RunSummary {
            algorithm: alg.name.clone(),
            seed,
            status,
            best_k: out.best_k,
            best_kkt: out.best_kkt_sq,
            total_queries: out.trace.rows.last().map_or(0, |r| r.oracle_queries),
            diagnostic_queries: problem.oracle.diagnostic_queries(),
            final_objective,
            wall_time_s: out.wall_time_s,
        },
        trace_csv,
        curve,
    })
}

fn write_curves<W: Write>(
    out: &mut W,
    per_algorithm: &[(String, Vec<Vec<CurvePoint>>)],
) -> std::io::Result<()> {
    writeln!(
        out,
        "algorithm,epoch,queries_mean,objective_mean,objective_std,test_loss_mean,test_loss_std,error_rate_mean,error_rate_std"
    )?;
    for (name, runs) in per_algorithm {
        let depth = runs.iter().map(Vec::len).min().unwrap_or(0);
        for e in 0..depth {
            let col: Vec<&CurvePoint> = runs.iter().map(|r| &r[e]).collect();
            let mean_std = |f: &dyn Fn(&CurvePoint) -> f64| -> (f64, f64) {
                let vals: Vec<f64> = col.iter().map(|p| f(p)).collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            let (obj_m, obj_s) = mean_std(&|p| p.objective);
            let (tl_m, tl_s) = mean_std(&|p| p.test_loss);
            let (er_m, er_s) = mean_std(&|p| p.error_rate);
            let q_mean =
                col.iter().map(|p| p.queries).sum::<u64>() as f64 / col.len() as f64;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                name, col[0].epoch, q_mean, obj_m, obj_s, tl_m, tl_s, er_m, er_s
            )?;
        }
    }
    Ok(())
}

/// Runs every (algorithm, seed) pair and writes the artifact directory:
/// one trace CSV per run, `summary.json`, and `curves.csv`. A failed run is
/// recorded and the experiment continues; `partial` is set in the summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, String> {
    cfg.validate()?;
    let family = Family::build(&cfg.problem)?;

    // one probe instantiation provides the problem metadata and the derived
    // schedule constants shared by every run
    let probe = {
        let mut inst = family.instantiate(cfg.run.seeds[0])?;
        inst.problem.metric = ProxMetric::Margin(cfg.run.metric_margin);
        inst
    };
    let (n, d, p) = probe.problem.dims();
    let problem_meta = serde_json::json!({
        "n": n,
        "d": d,
        "p": p,
        "edges": probe.edges,
        "lambda1": probe.reg_weight,
    });
    let schedule_json = match build_schedule(
        &cfg.schedule,
        &probe.problem,
        probe.lipschitz,
        cfg.run.iterations,
    )? {
        Schedule::Practical(pr) => serde_json::json!({
            "regime": "practical",
            "rho": pr.rho,
            "eta": format!("{:?}", pr.eta),
            "momentum": format!("{:?}", pr.momentum),
            "init_batch": pr.init_batch,
        }),
        theory => {
            let c = theory.constants().unwrap();
            serde_json::json!({
                "regime": if theory.is_dynamic() { "dynamic" } else { "constant" },
                "lipschitz": c.lipschitz,
                "sigma_a": c.sigma_a,
                "tau": c.tau,
                "c_a": c.c_a,
                "c_rho": c.c_rho,
                "c_eta": if c.c_eta.is_nan() { serde_json::Value::Null } else { serde_json::json!(c.c_eta) },
                "c_nu": c.c_nu,
                "c_gamma": c.c_gamma,
                "init_batch": theory.init_batch(),
            })
        }
    };
    drop(probe);

    let pairs: Vec<(usize, u64)> = cfg
        .algorithms
        .iter()
        .enumerate()
        .flat_map(|(ai, _)| cfg.run.seeds.iter().map(move |&s| (ai, s)))
        .collect();

    let results: Vec<(usize, u64, Result<RunArtifacts, String>)> = pairs
        .par_iter()
        .map(|&(ai, seed)| {
            let alg = &cfg.algorithms[ai];
            (ai, seed, execute_run(cfg, &family, alg, seed))
        })
        .collect();

    fs::create_dir_all(&cfg.run.output)
        .map_err(|e| format!("cannot create {}: {e}", cfg.run.output.display()))?;

    let mut runs = Vec::new();
    let mut partial = false;
    let mut curves: Vec<(String, Vec<Vec<CurvePoint>>)> = cfg
        .algorithms
        .iter()
        .map(|a| (a.name.clone(), Vec::new()))
        .collect();

    let mut ordered = results;
    ordered.sort_by_key(|&(ai, seed, _)| (ai, seed));
    for (ai, seed, result) in ordered {
        let alg = &cfg.algorithms[ai];
        match result {
            Ok(artifacts) => {
                let path = cfg
                    .run
                    .output
                    .join(format!("trace_{}_seed{}.csv", alg.name, seed));
                fs::write(&path, &artifacts.trace_csv)
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
                if artifacts.summary.status != "completed" {
                    partial = true;
                }
                curves[ai].1.push(artifacts.curve);
                runs.push(artifacts.summary);
            }
            Err(message) => {
                partial = true;
                runs.push(RunSummary {
                    algorithm: alg.name.clone(),
                    seed,
                    status: format!("error: {message}"),
                    best_k: None,
                    best_kkt: None,
                    total_queries: 0,
                    diagnostic_queries: 0,
                    final_objective: None,
                    wall_time_s: 0.0,
                });
            }
        }
    }

    let aggregates = cfg
        .algorithms
        .iter()
        .map(|a| {
            let of_alg: Vec<&RunSummary> = runs
                .iter()
                .filter(|r| r.algorithm == a.name && r.status == "completed")
                .collect();
            let mean = |f: &dyn Fn(&RunSummary) -> Option<f64>| -> Option<f64> {
                let vals: Vec<f64> = of_alg.iter().filter_map(|r| f(r)).collect();
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            AlgorithmAggregate {
                algorithm: a.name.clone(),
                mean_best_kkt: mean(&|r| r.best_kkt),
                mean_final_objective: mean(&|r| r.final_objective),
            }
        })
        .collect();

    let summary = Summary {
        iterations: cfg.run.iterations,
        epoch_queries: family.epoch_queries(cfg.run.iterations),
        partial,
        schedule: schedule_json,
        runs,
        aggregates,
    };

    let file = fs::File::create(cfg.run.output.join("summary.json"))
        .map_err(|e| format!("cannot write summary: {e}"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &summary)
        .map_err(|e| format!("summary serialization: {e}"))?;
    fs::write(
        cfg.run.output.join("problem.json"),
        serde_json::to_string_pretty(&problem_meta).map_err(|e| e.to_string())?,
    )
    .map_err(|e| format!("cannot write problem metadata: {e}"))?;

    let mut curves_file = BufWriter::new(
        fs::File::create(cfg.run.output.join("curves.csv"))
            .map_err(|e| format!("cannot write curves: {e}"))?,
    );
    write_curves(&mut curves_file, &curves).map_err(|e| format!("curves: {e}"))?;

    Ok(ExperimentOutcome {
        output_dir: cfg.run.output.clone(),
        summary,
    })
}
