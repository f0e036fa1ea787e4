use std::fmt::Write as _;

use crate::assignment::RoutingPolicy;
use crate::netmodel::ProblemInstance;

use super::{Check, PaymentSchedule, SchemeResult, Tolerances};

pub const ALPHA_CSV_HEADER: &str = "scenario,od,class,route,alpha";
pub const PI_CSV_HEADER: &str = "scenario,od,class,route,pi";

/// Properties reported as summary columns, in order.
const SUMMARY_PROPERTIES: [&str; 7] = [
    "pareto_exante",
    "truthful_exante",
    "budget",
    "robust_pareto",
    "truthful_expost",
    "ue_comp",
    "marginal_regret",
];

pub fn summary_header() -> String {
    let mut h = crate::assignment::FlowMetrics::CSV_HEADER.to_string();
    h.push_str(",status");
    for p in SUMMARY_PROPERTIES {
        h.push(',');
        h.push_str(p);
    }
    h.push_str(",verified");
    h
}

/// Metrics, solver status and one `pass`/`fail`/`-` column per property
/// (`-` when the scheme does not require it).
pub fn summary_row(inst: &ProblemInstance, result: &SchemeResult, tol: &Tolerances) -> String {
    let checks = result.checks(tol);
    let mut row = result
        .metrics
        .csv_row(result.scheme.name(), inst.lambda(), inst.mu());
    let _ = write!(row, ",{}", result.solver.status);
    for p in SUMMARY_PROPERTIES {
        let cell = match checks.iter().find(|c| c.property == p) {
            Some(Check { pass: true, .. }) => "pass",
            Some(_) => "fail",
            None => "-",
        };
        row.push(',');
        row.push_str(cell);
    }
    row.push_str(if checks.iter().all(|c| c.pass) {
        ",pass"
    } else {
        ",fail"
    });
    row
}

/// Human-readable report: metrics row, verification block and solver
/// diagnostics.
pub fn report_text(inst: &ProblemInstance, result: &SchemeResult, tol: &Tolerances) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", result.scheme);
    let _ = writeln!(s, "{}", crate::assignment::FlowMetrics::CSV_HEADER);
    let _ = writeln!(
        s,
        "{}",
        result
            .metrics
            .csv_row(result.scheme.name(), inst.lambda(), inst.mu())
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "property,residual,tolerance,pass");
    for c in result.checks(tol) {
        let _ = writeln!(
            s,
            "{},{:.6e},{:.6e},{}",
            c.property, c.residual, c.tolerance, c.pass
        );
    }
    if let Some(p) = &result.payments {
        if !p.degenerate_classes.is_empty() {
            let list: Vec<String> = p
                .degenerate_classes
                .iter()
                .map(|(c, w)| format!("scenario {} class {}", c + 1, w + 1))
                .collect();
            let _ = writeln!(
                s,
                "\nno benefit share (class without demand): {}",
                list.join("; ")
            );
        }
    }
    let r = &result.solver;
    let _ = writeln!(s);
    let _ = writeln!(s, "status,{}", r.status);
    let _ = writeln!(s, "objective,{:.9}", r.objective);
    let _ = writeln!(s, "kkt_residual,{:.3e}", r.kkt_residual);
    let _ = writeln!(s, "max_ineq_violation,{:.3e}", r.max_ineq_violation);
    let _ = writeln!(s, "max_eq_violation,{:.3e}", r.max_eq_violation);
    let _ = writeln!(s, "max_comp_violation,{:.3e}", r.max_comp_violation);
    let _ = writeln!(s, "iterations,{}", r.iterations);
    let _ = writeln!(s, "restarts_used,{}", r.restarts_used);
    let objs: Vec<String> = r
        .restart_objectives
        .iter()
        .map(|o| o.map_or_else(|| "infeasible".to_string(), |v| format!("{v:.9}")))
        .collect();
    let _ = writeln!(s, "restart_objectives,{}", objs.join(";"));
    if r.relaxation_stages > 0 {
        let _ = writeln!(s, "relaxation_stages,{}", r.relaxation_stages);
        let _ = writeln!(s, "final_relaxation,{:.3e}", r.final_relaxation);
    }
    if !result.aux.tolls.is_empty() {
        let tolls: Vec<String> = result
            .aux
            .tolls
            .iter()
            .enumerate()
            .map(|(g, t)| format!("{}={t:.6}", inst.global_route(g).label))
            .collect();
        let _ = writeln!(s, "tolls,{}", tolls.join(";"));
    }
    s
}

fn tensor_csv(
    inst: &ProblemInstance,
    header: &str,
    value: impl Fn(usize, usize, usize) -> f64,
) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for c in 0..inst.n_scenarios() {
        for j in 0..inst.n_od() {
            for w in 0..inst.n_classes() {
                for g in inst.route_range(j) {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{:.6}",
                        c + 1,
                        j + 1,
                        w + 1,
                        inst.global_route(g).label,
                        value(c, w, g)
                    );
                }
            }
        }
    }
    s
}

/// Full routing tensor, one row per `(scenario, od, class, route)`, indices
/// 1-based and routes by label.
pub fn alpha_csv(inst: &ProblemInstance, policy: &RoutingPolicy) -> String {
    tensor_csv(inst, ALPHA_CSV_HEADER, |c, w, g| policy.alpha(c, w, g))
}

pub fn pi_csv(inst: &ProblemInstance, payments: &PaymentSchedule) -> String {
    tensor_csv(inst, PI_CSV_HEADER, |c, w, g| payments.pi(c, w, g))
}
