use crate::assignment::{
    expected_route_times, flow_metrics, ue_reference, PolicyMode, RoutingPolicy, UeReference,
};
use crate::netmodel::ProblemInstance;
use crate::nlp::{solve, solve_mpcc, NlpProblem, SolveOptions, SolveResult};

use super::payments::{aops_payments, class_share_weights};
use super::programs::{AopsProgram, CpurrProgram, OpsProgram, SoProgram, UeProgram};
use super::verify::verify_parts;
use super::{PaymentSchedule, Scheme, SchemeError, SchemeOptions, SchemeResult, SolverAuxiliaries};

/// Programs are solved to half the reported tolerance so that residuals
/// recomputed from the returned policy still pass.
const INNER_TOL_FACTOR: f64 = 0.5;

/// Payments amplify routing errors by the value of time, so stationarity
/// is driven an order of magnitude below the requested step tolerance.
const INNER_STEP_FACTOR: f64 = 0.1;

fn inner(opts: &SolveOptions, tol: f64) -> SolveOptions {
    SolveOptions {
        constraint_tol: INNER_TOL_FACTOR * tol,
        step_tol: INNER_STEP_FACTOR * opts.step_tol,
        ..opts.clone()
    }
}

fn finish(
    inst: &ProblemInstance,
    scheme: Scheme,
    policy: RoutingPolicy,
    payments: Option<PaymentSchedule>,
    solver: SolveResult,
    ue: &UeReference,
    aux: SolverAuxiliaries,
) -> SchemeResult {
    let verification = verify_parts(inst, scheme, &policy, payments.as_ref(), ue);
    SchemeResult {
        scheme,
        metrics: flow_metrics(inst, &policy),
        policy,
        payments,
        solver,
        verification,
        aux,
    }
}

/// `min_r F[j][r]` per OD pair.
fn cost_levels(inst: &ProblemInstance, policy: &RoutingPolicy) -> Vec<f64> {
    let f = expected_route_times(inst, &policy.layout(), policy.as_slice());
    (0..inst.n_od())
        .map(|j| {
            f[inst.route_range(j)]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// User equilibrium minimizing `lambda E[T_tr] + (1 - lambda) E[T_mon]`
/// among equilibria. Uses the warm start in `opts` if any, random starts
/// otherwise.
pub fn solve_ue(inst: &ProblemInstance, opts: &SchemeOptions) -> Result<SchemeResult, SchemeError> {
    opts.validate()?;
    let prog = UeProgram::new(inst);
    let sol = solve_mpcc(&prog, &inner(&opts.nlp, opts.nlp.constraint_tol));
    let (alpha, zeta) = prog.split(&sol.point);
    let policy = RoutingPolicy::class_anonymous(inst, alpha)?;
    let ue = ue_reference(inst, &policy)?;
    let aux = SolverAuxiliaries {
        zeta: zeta.iter().map(|z| vec![*z; inst.n_classes()]).collect(),
        tolls: Vec::new(),
    };
    Ok(finish(inst, Scheme::Ue, policy, None, sol, &ue, aux))
}

/// System optimum. Starts from `warm` if given, otherwise from random
/// starts.
pub fn solve_so(
    inst: &ProblemInstance,
    ue: &UeReference,
    opts: &SchemeOptions,
    warm: Option<&RoutingPolicy>,
) -> Result<SchemeResult, SchemeError> {
    opts.validate()?;
    let prog = SoProgram::new(inst);
    let mut nlp = inner(&opts.nlp, opts.nlp.constraint_tol);
    if let Some(w) = warm {
        nlp = nlp.with_warm_start(w.to_scenario_dependent().as_slice().to_vec());
    }
    let sol = solve(&prog, &nlp);
    let policy = RoutingPolicy::with_layout(inst, prog.layout(), sol.point.clone())?;
    Ok(finish(
        inst,
        Scheme::So,
        policy,
        None,
        sol,
        ue,
        SolverAuxiliaries::default(),
    ))
}

/// Optimum pricing scheme, started from `warm` (routing and payments) or,
/// by default, from the UE without payments.
pub fn solve_ops(
    inst: &ProblemInstance,
    ue: &UeReference,
    opts: &SchemeOptions,
    warm: Option<&SchemeResult>,
) -> Result<SchemeResult, SchemeError> {
    opts.validate()?;
    let prog = OpsProgram::new(inst, ue);
    let layout = prog.layout();
    let (policy0, pay0) = match warm {
        Some(r) => (r.policy.to_scenario_dependent(), r.payments.clone()),
        None => (ue.policy.to_scenario_dependent(), None),
    };
    if policy0.layout() != layout {
        return Err(SchemeError::WarmStart(
            "routing tensor has the wrong shape".into(),
        ));
    }
    let mut x0 = policy0.as_slice().to_vec();
    x0.resize(2 * layout.len(), 0.0);
    if let Some(pay) = &pay0 {
        for c in 0..inst.n_scenarios() {
            for w in 0..inst.n_classes() {
                for g in 0..inst.n_routes() {
                    x0[layout.len() + layout.index(c, w, g)] = pay.pi(c, w, g) / inst.vot(w);
                }
            }
        }
    }
    let sol = solve(
        &prog,
        &inner(&opts.nlp, opts.nlp.constraint_tol).with_warm_start(x0),
    );
    let (alpha, q) = prog.split(&sol.point);
    let policy = RoutingPolicy::with_layout(inst, layout, alpha.to_vec())?;
    let mut pi = vec![0.0; layout.len()];
    for c in 0..inst.n_scenarios() {
        for w in 0..inst.n_classes() {
            for g in 0..inst.n_routes() {
                let idx = layout.index(c, w, g);
                pi[idx] = inst.vot(w) * q[idx];
            }
        }
    }
    let payments = PaymentSchedule::per_driver(inst, pi);
    Ok(finish(
        inst,
        Scheme::Ops,
        policy,
        Some(payments),
        sol,
        ue,
        SolverAuxiliaries::default(),
    ))
}

fn aops_impl(
    inst: &ProblemInstance,
    ue: &UeReference,
    opts: &SchemeOptions,
    ex_post: bool,
) -> Result<SchemeResult, SchemeError> {
    opts.validate()?;
    let shares = class_share_weights(inst)?;
    let prog = AopsProgram::new(inst, ue, shares, ex_post);
    let x0 = ue.policy.to_scenario_dependent().as_slice().to_vec();
    let sol = solve(
        &prog,
        &inner(&opts.nlp, opts.nlp.constraint_tol).with_warm_start(x0),
    );
    let policy = RoutingPolicy::with_layout(inst, prog.layout(), sol.point.clone())?;
    let payments = aops_payments(inst, &policy, ue)?;
    let scheme = if ex_post {
        Scheme::AopsEpt
    } else {
        Scheme::Aops
    };
    Ok(finish(
        inst,
        scheme,
        policy,
        Some(payments),
        sol,
        ue,
        SolverAuxiliaries::default(),
    ))
}

/// Approximately optimum pricing scheme, started from the UE.
pub fn solve_aops(
    inst: &ProblemInstance,
    ue: &UeReference,
    opts: &SchemeOptions,
) -> Result<SchemeResult, SchemeError> {
    aops_impl(inst, ue, opts, false)
}

/// AOPS with truthfulness enforced in every demand scenario.
pub fn solve_aops_ept(
    inst: &ProblemInstance,
    ue: &UeReference,
    opts: &SchemeOptions,
) -> Result<SchemeResult, SchemeError> {
    aops_impl(inst, ue, opts, true)
}

/// CPURR, solving the UE first to warm start from it.
pub fn solve_cpurr(
    inst: &ProblemInstance,
    opts: &SchemeOptions,
) -> Result<SchemeResult, SchemeError> {
    let ue = solve_ue(inst, opts)?;
    solve_cpurr_from(inst, &ue, opts)
}

/// CPURR warm-started from a UE result with zero tolls.
pub fn solve_cpurr_from(
    inst: &ProblemInstance,
    ue_result: &SchemeResult,
    opts: &SchemeOptions,
) -> Result<SchemeResult, SchemeError> {
    opts.validate()?;
    let ue_policy = &ue_result.policy;
    if ue_policy.mode() != PolicyMode::ScenarioIndependent {
        return Err(SchemeError::WarmStart(
            "the UE policy must be scenario-independent".into(),
        ));
    }
    let ue = ue_reference(inst, ue_policy)?;
    let prog = CpurrProgram::new(inst, ue.money_scale());
    let layout = prog.layout();
    let levels = cost_levels(inst, ue_policy);
    let mut x0 = Vec::with_capacity(prog.shape().dim);
    for w in 0..inst.n_classes() {
        x0.extend_from_slice(ue_policy.block(0, w));
    }
    x0.extend(std::iter::repeat_n(0.0, inst.n_routes()));
    for level in &levels {
        x0.extend(std::iter::repeat_n(*level, inst.n_classes()));
    }
    let nlp = inner(&opts.nlp, opts.cpurr_constraint_tol).with_warm_start(x0);
    let sol = solve_mpcc(&prog, &nlp);
    let (alpha, tau, zeta) = prog.split(&sol.point);
    let policy = RoutingPolicy::with_layout(inst, layout, alpha.to_vec())?;
    let tolls: Vec<f64> = tau.iter().map(|t| t * prog.toll_unit()).collect();
    let payments = PaymentSchedule::route_tolls(inst, &tolls);
    let aux = SolverAuxiliaries {
        zeta: zeta.chunks(inst.n_classes()).map(<[f64]>::to_vec).collect(),
        tolls,
    };
    Ok(finish(
        inst,
        Scheme::Cpurr,
        policy,
        Some(payments),
        sol,
        &ue,
        aux,
    ))
}
