use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::netmodel::ProblemInstance;
use crate::nlp::SolveOptions;
use crate::schemes::{
    alpha_csv, pi_csv, report_text, summary_header, summary_row, SchemeResult, Tolerances,
};

use super::{CliError, SolveArgs};

/// Settings and solver outcomes of a run, written as TOML to `run.meta`.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub version: String,
    pub command: String,
    pub instance: String,
    pub network: String,
    pub lambda_override: Option<f64>,
    pub mu_override: Option<f64>,
    pub seed: u64,
    pub restarts: usize,
    pub tol_step: f64,
    pub tol_constraint: f64,
    pub tol_cpurr: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub relax_t0: f64,
    pub relax_sigma: f64,
    pub lambdas: Vec<f64>,
    pub runs: Vec<SchemeMeta>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeMeta {
    pub scheme: String,
    pub lambda: f64,
    pub status: String,
    pub objective: f64,
    pub iterations: usize,
    /// Per start, `infeasible` when the start found no feasible point.
    pub restart_objectives: Vec<String>,
    pub relaxation_stages: usize,
    pub final_relaxation: f64,
}

impl RunMeta {
    pub fn new(
        command: &str,
        args: &SolveArgs,
        net_path: &Path,
        runs: &[(ProblemInstance, Vec<SchemeResult>)],
    ) -> Self {
        let nlp: SolveOptions = args.options().nlp;
        RunMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            instance: args.instance.instance.display().to_string(),
            network: net_path.display().to_string(),
            lambda_override: args.instance.lambda,
            mu_override: args.instance.mu,
            seed: nlp.seed,
            restarts: nlp.multistart,
            tol_step: nlp.step_tol,
            tol_constraint: nlp.constraint_tol,
            tol_cpurr: args.tol_cpurr,
            max_outer_iters: nlp.max_outer_iters,
            max_inner_iters: nlp.max_inner_iters,
            relax_t0: nlp.relax_t0,
            relax_sigma: nlp.relax_sigma,
            lambdas: runs.iter().map(|(i, _)| i.lambda()).collect(),
            runs: runs
                .iter()
                .flat_map(|(inst, results)| {
                    results.iter().map(move |r| SchemeMeta {
                        scheme: r.scheme.name().to_string(),
                        lambda: inst.lambda(),
                        status: r.solver.status.to_string(),
                        objective: r.solver.objective,
                        iterations: r.solver.iterations,
                        restart_objectives: r
                            .solver
                            .restart_objectives
                            .iter()
                            .map(|o| {
                                o.map_or_else(|| "infeasible".to_string(), |v| format!("{v:.12e}"))
                            })
                            .collect(),
                        relaxation_stages: r.solver.relaxation_stages,
                        final_relaxation: r.solver.final_relaxation,
                    })
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run metadata always serializes")
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `summary.csv`, one report per result, optional tensors and
/// `run.meta` under `out`. With several runs (a sweep), per-run files go to
/// `lambda_<value>/`; with several schemes, tensors go to `<scheme>/`.
pub fn write_results(
    out: &Path,
    runs: &[(ProblemInstance, Vec<SchemeResult>)],
    tol: &Tolerances,
    emit_tensors: bool,
    meta: &RunMeta,
) -> Result<(), CliError> {
    let mut summary = summary_header();
    summary.push('\n');
    for (inst, results) in runs {
        for r in results {
            summary.push_str(&summary_row(inst, r, tol));
            summary.push('\n');
        }
    }
    write(&out.join("summary.csv"), &summary)?;

    for (inst, results) in runs {
        let dir: PathBuf = if runs.len() > 1 {
            out.join(format!("lambda_{}", inst.lambda()))
        } else {
            out.to_path_buf()
        };
        for r in results {
            let name = r.scheme.name().to_lowercase();
            write(
                &dir.join(format!("report_{name}.txt")),
                &report_text(inst, r, tol),
            )?;
            if emit_tensors {
                let tdir = if results.len() > 1 {
                    dir.join(&name)
                } else {
                    dir.clone()
                };
                write(&tdir.join("alpha.csv"), &alpha_csv(inst, &r.policy))?;
                if let Some(p) = &r.payments {
                    write(&tdir.join("pi.csv"), &pi_csv(inst, p))?;
                }
            }
        }
    }
    write(&out.join("run.meta"), &meta.to_toml())
}
