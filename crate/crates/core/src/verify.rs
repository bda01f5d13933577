//! Worst-case guarantees of an encoded network over its whole load domain.
//!
//! Each metric is a maximum of affine terms. By default every term gets its
//! own MILP, solved in order with the best value so far as cutoff; the
//! disjunctive strategy puts all terms in one MILP with selector binaries.
//! Distance and sub-optimality also embed the DC-OPF optimality conditions.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::InputDomain;
use crate::dcopf::embed_kkt;
use crate::encode::{
    bound_cascade, encode_network, EncodeError, Executor, NetworkEncoding, StabilityMode, TightenOptions,
};
use crate::grid::{AdmittanceSet, GridCase};
use crate::linalg::Matrix;
use crate::lp::{
    solve_milp, Clock, LinExpr, LinearModel, LpError, LpSession, Relation, Sense, SolveResult, SolverParams,
    Status, VarId,
};
use crate::math::abs;
use crate::metrics::{distance_gens, Metric};
use crate::mlp::MlpNetwork;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("verification MILP is infeasible; the load domain is empty")]
    Infeasible,
    #[error("verification MILP is unbounded")]
    Unbounded,
    #[error("reference cost must be positive and finite, got {0}")]
    ReferenceCost(f64),
    #[error("complementarity constant {0:e} cuts off the optimal dispatch")]
    BigMBinding(f64),
    #[error("no generator has a positive output range")]
    NoDistanceGens,
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// One MILP per term with progressive cutoffs.
    PerTerm,
    /// One MILP with a binary selecting the maximizing term.
    Disjunctive,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::PerTerm => "per_term",
            Strategy::Disjunctive => "disjunctive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub gap_tol: f64,
    /// Per MILP solve, in seconds.
    pub time_limit: Option<f64>,
    pub max_nodes: Option<usize>,
    /// Complementarity constant for the embedded optimality conditions.
    pub big_m: f64,
    /// How often a binding constant is multiplied by 10 and the metric re-solved.
    pub big_m_retries: usize,
    pub strategy: Strategy,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            gap_tol: 0.0,
            time_limit: None,
            max_nodes: None,
            big_m: 1e5,
            big_m_retries: 2,
            strategy: Strategy::PerTerm,
        }
    }
}

impl VerifyOptions {
    fn params(&self, cutoff: Option<f64>) -> SolverParams {
        SolverParams {
            gap_tol: self.gap_tol,
            time_limit: self.time_limit,
            max_nodes: self.max_nodes,
            cutoff,
            ..SolverParams::default()
        }
    }
}

/// Slack of every complementarity row whose constant is active at a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct BigMAudit {
    /// `(row index, rhs - activity)` for rows relaxed by their indicator.
    pub slacks: Vec<(usize, f64)>,
    pub min_slack: f64,
    pub passed: bool,
}

/// Absolute slack below which a relaxed complementarity row counts as binding.
pub const BIG_M_BINDING_TOL: f64 = 1e-6;

/// Checks that no relaxed big-M row is tight at `x`.
pub fn audit_big_m(model: &LinearModel, x: &[f64]) -> BigMAudit {
    let mut slacks = Vec::new();
    for (i, row) in model.constraints().iter().enumerate() {
        let Some(tag) = row.big_m else { continue };
        if abs(x[tag.indicator.0] - tag.relaxed_at) > 0.5 {
            continue;
        }
        let act = row.activity(x);
        let s = match row.relation {
            Relation::Le => row.rhs - act,
            Relation::Ge => act - row.rhs,
            Relation::Eq => 0.0,
        };
        slacks.push((i, s));
    }
    let min_slack = slacks.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    BigMAudit {
        passed: min_slack > BIG_M_BINDING_TOL,
        slacks,
        min_slack,
    }
}

/// Outcome of one term's MILP.
#[derive(Debug, Clone, PartialEq)]
pub struct TermResult {
    pub label: String,
    /// Generator or line index, `None` for a scalar metric.
    pub index: Option<usize>,
    pub status: Status,
    /// Incumbent in the metric's unit, NaN without one.
    pub value: f64,
    /// Proven upper bound in the metric's unit.
    pub bound: f64,
    pub node_count: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub metric: Metric,
    /// Best value found, in MW or %.
    pub value: f64,
    /// Proven upper bound; equals `value` when the solve is exact.
    pub upper_bound: f64,
    /// Same quantity before normalization (MW for distance, $/h for cost).
    pub raw_value: f64,
    pub maximizer_load: Vec<f64>,
    /// Predicted dispatch for every generator at the maximizer.
    pub maximizer_dispatch: Vec<f64>,
    /// Optimal dispatch at the maximizer (bilevel metrics only).
    pub optimal_dispatch: Option<Vec<f64>>,
    /// Generator or line attaining the maximum.
    pub attaining_index: Option<usize>,
    pub milp_gap: f64,
    pub status: Status,
    pub node_count: usize,
    pub wall_time: f64,
    pub terms: Vec<TermResult>,
    pub strategy: Strategy,
    pub stability_mode: StabilityMode,
    pub free_neurons: usize,
    /// Final complementarity constant (bilevel metrics only).
    pub big_m: Option<f64>,
    pub big_m_audit: Option<BigMAudit>,
    pub empirical: Option<f64>,
    pub ratio: Option<f64>,
    /// Share of loads sitting on a box bound at the maximizer.
    pub boundary_fraction: f64,
}

impl VerificationReport {
    /// Whether the value is a proven optimum rather than a lower bound.
    pub fn is_exact(&self) -> bool {
        self.status == Status::Optimal && self.milp_gap <= 0.0
    }

    /// Attaches the dataset maximum; the ratio is only defined for a
    /// positive empirical value.
    pub fn with_empirical(mut self, empirical: f64) -> Self {
        self.empirical = Some(empirical);
        self.ratio = (empirical > 0.0).then(|| self.value / empirical);
        self
    }
}

struct Term {
    label: String,
    index: Option<usize>,
    expr: LinExpr,
}

struct Maximum {
    value: f64,
    upper: f64,
    x: Vec<f64>,
    index: Option<usize>,
    status: Status,
    node_count: usize,
    terms: Vec<TermResult>,
    solutions: Vec<Vec<f64>>,
}

fn gap(value: f64, upper: f64) -> f64 {
    if upper <= value {
        0.0
    } else {
        (upper - value) / abs(value).max(1.0)
    }
}

fn worse(a: Status, b: Status) -> Status {
    let rank = |s: Status| match s {
        Status::Optimal | Status::Cutoff => 0,
        Status::NodeLimit => 1,
        Status::TimeLimit => 2,
        _ => 3,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn check(r: &SolveResult) -> Result<(), VerifyError> {
    match r.status {
        Status::Infeasible => Err(VerifyError::Infeasible),
        Status::Unbounded => Err(VerifyError::Unbounded),
        _ => Ok(()),
    }
}

/// A feasible point of the model, used as maximizer when no term beats the
/// clipping floor.
fn any_point(
    model: &LinearModel,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<(Vec<f64>, usize), VerifyError> {
    let mut m = model.clone();
    m.set_objective(Sense::Minimize, LinExpr::new());
    let r = solve_milp(&m, &opts.params(None), clock)?;
    check(&r)?;
    if !r.has_solution() {
        return Err(VerifyError::Infeasible);
    }
    Ok((r.x, r.node_count))
}

fn maximize_per_term(
    model: &LinearModel,
    terms: &[Term],
    floor: Option<f64>,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<Maximum, VerifyError> {
    let mut best = floor.unwrap_or(f64::NEG_INFINITY);
    let mut upper = best;
    let mut x = Vec::new();
    let mut index = None;
    let mut status = Status::Optimal;
    let mut node_count = 0;
    let mut results = Vec::with_capacity(terms.len());
    let mut solutions = Vec::new();
    let mut m = model.clone();
    for t in terms {
        m.set_objective(Sense::Maximize, t.expr.clone());
        let cutoff = best.is_finite().then_some(best);
        let r = solve_milp(&m, &opts.params(cutoff), clock)?;
        check(&r)?;
        node_count += r.node_count;
        status = worse(status, r.status);
        let bound = match r.status {
            Status::Cutoff => cutoff.unwrap_or(f64::NEG_INFINITY),
            Status::Optimal => r.bound.max(r.objective),
            _ => r.bound,
        };
        upper = upper.max(bound);
        if r.has_solution() && r.objective > best {
            best = r.objective;
            x = r.x.clone();
            index = t.index;
        }
        if r.has_solution() {
            solutions.push(r.x);
        }
        results.push(TermResult {
            label: t.label.clone(),
            index: t.index,
            status: r.status,
            value: r.objective,
            bound,
            node_count: r.node_count,
            wall_time: r.wall_time,
        });
    }
    if x.is_empty() {
        let (p, n) = any_point(model, opts, clock)?;
        x = p;
        node_count += n;
    }
    Ok(Maximum {
        value: best,
        upper,
        x,
        index,
        status,
        node_count,
        terms: results,
        solutions,
    })
}

fn maximize_disjunctive(
    model: &LinearModel,
    terms: &[Term],
    floor: Option<f64>,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<Maximum, VerifyError> {
    let mut exprs: Vec<&LinExpr> = terms.iter().map(|t| &t.expr).collect();
    let zero = LinExpr::constant(floor.unwrap_or(0.0));
    if floor.is_some() {
        exprs.push(&zero);
    }
    let mut session = LpSession::new(model.clone())?;
    let mut range = Vec::with_capacity(exprs.len());
    for e in &exprs {
        let hi = session.solve_objective(Sense::Maximize, (*e).clone())?;
        check(&hi)?;
        let lo = session.solve_objective(Sense::Minimize, (*e).clone())?;
        check(&lo)?;
        range.push((lo.objective, hi.objective));
    }
    let top = range.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let mut m = model.clone();
    let t = m.add_free_var();
    let mut pick = LinExpr::new();
    let mut selectors: Vec<VarId> = Vec::with_capacity(exprs.len());
    for (e, (lo, _)) in exprs.iter().zip(&range) {
        // t <= e + (top - lo)(1 - y)
        let big = (top - lo).max(0.0) * (1.0 + 1e-9) + 1e-9;
        let y = m.add_binary();
        let mut row = LinExpr::var(t);
        row.add_scaled(e, -1.0).add_term(y, big);
        m.add_constraint(row, Relation::Le, big);
        pick.add_term(y, 1.0);
        selectors.push(y);
    }
    m.add_constraint(pick, Relation::Eq, 1.0);
    m.set_objective(Sense::Maximize, LinExpr::var(t));
    let r = solve_milp(&m, &opts.params(None), clock)?;
    check(&r)?;
    if !r.has_solution() {
        return Err(VerifyError::Infeasible);
    }
    let chosen = selectors.iter().position(|y| r.x[y.0] > 0.5);
    let index = chosen.and_then(|k| terms.get(k)).and_then(|t| t.index);
    // Report the attained maximum of the terms at the solution rather than
    // t, which may sit slightly below it.
    let value = exprs
        .iter()
        .map(|e| e.eval(&r.x))
        .fold(f64::NEG_INFINITY, f64::max);
    let n = model.num_vars();
    Ok(Maximum {
        value,
        upper: r.bound.max(value),
        x: r.x[..n].to_vec(),
        index,
        status: r.status,
        node_count: r.node_count,
        terms: vec![TermResult {
            label: String::from("disjunction"),
            index,
            status: r.status,
            value,
            bound: r.bound,
            node_count: r.node_count,
            wall_time: r.wall_time,
        }],
        solutions: vec![r.x[..n].to_vec()],
    })
}

fn maximize(
    model: &LinearModel,
    terms: &[Term],
    floor: Option<f64>,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<Maximum, VerifyError> {
    match opts.strategy {
        Strategy::PerTerm => maximize_per_term(model, terms, floor, opts, clock),
        Strategy::Disjunctive => maximize_disjunctive(model, terms, floor, opts, clock),
    }
}

fn boundary_fraction(enc: &NetworkEncoding, load: &[f64]) -> f64 {
    if load.is_empty() {
        return 0.0;
    }
    let (lo, hi) = (enc.model.lower(), enc.model.upper());
    let on = enc
        .p_d
        .iter()
        .zip(load)
        .filter(|(v, p)| {
            let tol = 1e-6 * (1.0 + abs(**p));
            abs(**p - lo[v.0]) <= tol || abs(**p - hi[v.0]) <= tol
        })
        .count();
    on as f64 / load.len() as f64
}

fn report(
    metric: Metric,
    enc: &NetworkEncoding,
    max: Maximum,
    raw_scale: f64,
    optimal: Option<&[VarId]>,
    opts: &VerifyOptions,
    wall_time: f64,
) -> VerificationReport {
    let load: Vec<f64> = enc.p_d.iter().map(|v| max.x[v.0]).collect();
    VerificationReport {
        metric,
        value: max.value,
        upper_bound: max.upper,
        raw_value: max.value * raw_scale,
        maximizer_dispatch: enc.p_hat.iter().map(|v| max.x[v.0]).collect(),
        optimal_dispatch: optimal.map(|p| p.iter().map(|v| max.x[v.0]).collect()),
        attaining_index: max.index,
        milp_gap: gap(max.value, max.upper),
        status: max.status,
        node_count: max.node_count,
        wall_time,
        terms: max.terms,
        strategy: opts.strategy,
        stability_mode: enc.mode,
        free_neurons: enc.free_neurons(),
        big_m: None,
        big_m_audit: None,
        empirical: None,
        ratio: None,
        boundary_fraction: boundary_fraction(enc, &load),
        maximizer_load: load,
    }
}

fn gen_terms(enc: &NetworkEncoding, case: &GridCase) -> Vec<Term> {
    let mut terms = Vec::with_capacity(2 * case.n_gens());
    for (g, gen) in case.gens.iter().enumerate() {
        let mut up = LinExpr::var(enc.p_hat[g]);
        up.add_constant(-gen.p_max);
        terms.push(Term {
            label: alloc::format!("gen {g} max"),
            index: Some(g),
            expr: up,
        });
        let mut down = LinExpr::term(enc.p_hat[g], -1.0);
        down.add_constant(gen.p_min);
        terms.push(Term {
            label: alloc::format!("gen {g} min"),
            index: Some(g),
            expr: down,
        });
    }
    terms
}

/// Line flow expressions in MW from the predicted injections.
fn flow_exprs(enc: &NetworkEncoding, case: &GridCase, adm: &AdmittanceSet) -> Vec<LinExpr> {
    let mut inj: Vec<LinExpr> = vec![LinExpr::new(); case.n_buses()];
    for (g, gen) in case.gens.iter().enumerate() {
        inj[gen.bus].add_term(enc.p_hat[g], 1.0);
    }
    for (l, load) in case.loads.iter().enumerate() {
        inj[load.bus].add_term(enc.p_d[l], -1.0);
    }
    (0..case.n_lines())
        .map(|i| {
            let mut f = LinExpr::new();
            for (k, &b) in adm.non_slack.iter().enumerate() {
                let c = adm.ptdf[(i, k)];
                if c != 0.0 {
                    f.add_scaled(&inj[b], c);
                }
            }
            f.normalized()
        })
        .collect()
}

fn line_terms(enc: &NetworkEncoding, case: &GridCase, adm: &AdmittanceSet) -> Vec<Term> {
    let flows = flow_exprs(enc, case, adm);
    let mut terms = Vec::new();
    for (i, (line, f)) in case.lines.iter().zip(&flows).enumerate() {
        if !line.flow_limit.is_finite() {
            continue;
        }
        for (sign, tag) in [(1.0, "+"), (-1.0, "-")] {
            let mut e = f.scaled(sign);
            e.add_constant(-line.flow_limit);
            terms.push(Term {
                label: alloc::format!("line {i} {tag}"),
                index: Some(i),
                expr: e,
            });
        }
    }
    terms
}

fn distance_terms(enc: &NetworkEncoding, case: &GridCase, p_g: &[VarId]) -> Vec<Term> {
    let mut terms = Vec::new();
    for g in distance_gens(case) {
        let gen = &case.gens[g];
        let scale = 100.0 / (gen.p_max - gen.p_min);
        for (sign, tag) in [(1.0, "+"), (-1.0, "-")] {
            let mut e = LinExpr::new();
            e.add_term(enc.p_hat[g], sign * scale)
                .add_term(p_g[g], -sign * scale);
            terms.push(Term {
                label: alloc::format!("gen {g} {tag}"),
                index: Some(g),
                expr: e,
            });
        }
    }
    terms
}

fn cost_terms(enc: &NetworkEncoding, case: &GridCase, p_g: &[VarId], reference_cost: f64) -> Vec<Term> {
    let scale = 100.0 / reference_cost;
    let mut e = LinExpr::new();
    for (g, gen) in case.gens.iter().enumerate() {
        if gen.cost != 0.0 {
            e.add_term(enc.p_hat[g], gen.cost * scale)
                .add_term(p_g[g], -gen.cost * scale);
        }
    }
    vec![Term {
        label: String::from("cost"),
        index: None,
        expr: e.normalized(),
    }]
}

fn check_reference(reference_cost: f64) -> Result<(), VerifyError> {
    if reference_cost > 0.0 && reference_cost.is_finite() {
        Ok(())
    } else {
        Err(VerifyError::ReferenceCost(reference_cost))
    }
}

/// Largest generator limit violation in MW, slack completion included.
pub fn worst_case_generation(
    enc: &NetworkEncoding,
    case: &GridCase,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<VerificationReport, VerifyError> {
    let t0 = clock.seconds();
    let max = maximize(&enc.model, &gen_terms(enc, case), Some(0.0), opts, clock)?;
    Ok(report(
        Metric::NuG,
        enc,
        max,
        1.0,
        None,
        opts,
        clock.seconds() - t0,
    ))
}

/// Largest line flow limit violation in MW.
pub fn worst_case_line(
    enc: &NetworkEncoding,
    case: &GridCase,
    adm: &AdmittanceSet,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<VerificationReport, VerifyError> {
    let t0 = clock.seconds();
    let max = maximize(&enc.model, &line_terms(enc, case, adm), Some(0.0), opts, clock)?;
    Ok(report(
        Metric::NuLine,
        enc,
        max,
        1.0,
        None,
        opts,
        clock.seconds() - t0,
    ))
}

fn kkt_loads(enc: &NetworkEncoding) -> Vec<LinExpr> {
    enc.p_d.iter().map(|v| LinExpr::var(*v)).collect()
}

/// Builds the terms of a bilevel metric from the lower-level dispatch
/// variables: terms, cutoff floor and the scale applied to the raw value.
type TermsFor<'a> = dyn Fn(&[VarId]) -> (Vec<Term>, Option<f64>, f64) + 'a;

/// Solves a bilevel metric with the complementarity constant raised while
/// the audit finds a binding row.
fn bilevel(
    metric: Metric,
    enc: &NetworkEncoding,
    case: &GridCase,
    adm: &AdmittanceSet,
    opts: &VerifyOptions,
    clock: &dyn Clock,
    terms_for: &TermsFor<'_>,
) -> Result<VerificationReport, VerifyError> {
    let t0 = clock.seconds();
    let loads = kkt_loads(enc);
    let mut big_m = opts.big_m;
    let mut attempt = 0;
    loop {
        let mut model = enc.model.clone();
        let kkt = embed_kkt(&mut model, case, adm, &loads, big_m);
        let (terms, floor, raw_scale) = terms_for(&kkt.p_g);
        let max = match maximize(&model, &terms, floor, opts, clock) {
            // The encoding alone is feasible, so the constant cut off every
            // optimal dispatch.
            Err(VerifyError::Infeasible) if attempt < opts.big_m_retries => {
                log::warn!(
                    "{}: no KKT point within complementarity constant {big_m:e}; retrying with {:e}",
                    metric.as_str(),
                    big_m * 10.0
                );
                big_m *= 10.0;
                attempt += 1;
                continue;
            }
            Err(VerifyError::Infeasible) => return Err(VerifyError::BigMBinding(big_m)),
            other => other?,
        };
        let audits: Vec<BigMAudit> = max.solutions.iter().map(|x| audit_big_m(&model, x)).collect();
        let passed = audits.iter().all(|a| a.passed);
        let worst = audits
            .into_iter()
            .min_by(|a, b| a.min_slack.total_cmp(&b.min_slack))
            .unwrap_or(BigMAudit {
                slacks: Vec::new(),
                min_slack: f64::INFINITY,
                passed: true,
            });
        if !passed && attempt < opts.big_m_retries {
            log::warn!(
                "{}: complementarity constant {big_m:e} is binding (slack {:e}); retrying with {:e}",
                metric.as_str(),
                worst.min_slack,
                big_m * 10.0
            );
            big_m *= 10.0;
            attempt += 1;
            continue;
        }
        if !passed {
            log::warn!(
                "{}: complementarity constant still binding after {attempt} retries",
                metric.as_str()
            );
        }
        let mut r = report(
            metric,
            enc,
            max,
            raw_scale,
            Some(&kkt.p_g),
            opts,
            clock.seconds() - t0,
        );
        r.big_m = Some(big_m);
        r.big_m_audit = Some(worst);
        return Ok(r);
    }
}

/// Largest distance between predicted and optimal dispatch, in % of each
/// generator's output range. `raw_value` is in MW of the attaining unit.
pub fn worst_case_distance(
    enc: &NetworkEncoding,
    case: &GridCase,
    adm: &AdmittanceSet,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<VerificationReport, VerifyError> {
    let gens = distance_gens(case);
    if gens.is_empty() {
        return Err(VerifyError::NoDistanceGens);
    }
    if gens.len() < case.n_gens() {
        log::warn!(
            "nu_dist: {} generator(s) with p_max = p_min left out",
            case.n_gens() - gens.len()
        );
    }
    let mut r = bilevel(Metric::NuDist, enc, case, adm, opts, clock, &|p_g| {
        (distance_terms(enc, case, p_g), Some(0.0), 1.0)
    })?;
    r.raw_value = match r.attaining_index {
        Some(g) => r.value * (case.gens[g].p_max - case.gens[g].p_min) / 100.0,
        None => 0.0,
    };
    Ok(r)
}

/// Largest cost above the optimum, in % of `reference_cost`; `raw_value`
/// is in $/h. The value may be negative.
pub fn worst_case_suboptimality(
    enc: &NetworkEncoding,
    case: &GridCase,
    adm: &AdmittanceSet,
    reference_cost: f64,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<VerificationReport, VerifyError> {
    check_reference(reference_cost)?;
    bilevel(Metric::NuOpt, enc, case, adm, opts, clock, &|p_g| {
        (
            cost_terms(enc, case, p_g, reference_cost),
            None,
            reference_cost / 100.0,
        )
    })
}

/// The per-term maximization models of a metric, objective set, as solved
/// by the per-term strategy with complementarity constant `big_m`.
pub fn term_models(
    metric: Metric,
    enc: &NetworkEncoding,
    case: &GridCase,
    adm: &AdmittanceSet,
    reference_cost: f64,
    big_m: f64,
) -> Result<Vec<(String, LinearModel)>, VerifyError> {
    let mut model = enc.model.clone();
    let terms = match metric {
        Metric::NuG => gen_terms(enc, case),
        Metric::NuLine => line_terms(enc, case, adm),
        Metric::NuDist | Metric::NuOpt => {
            let kkt = embed_kkt(&mut model, case, adm, &kkt_loads(enc), big_m);
            if metric == Metric::NuDist {
                distance_terms(enc, case, &kkt.p_g)
            } else {
                check_reference(reference_cost)?;
                cost_terms(enc, case, &kkt.p_g, reference_cost)
            }
        }
    };
    Ok(terms
        .into_iter()
        .map(|t| {
            let mut m = model.clone();
            m.set_objective(Sense::Maximize, t.expr);
            (t.label, m)
        })
        .collect())
}

pub fn worst_case(
    metric: Metric,
    enc: &NetworkEncoding,
    case: &GridCase,
    adm: &AdmittanceSet,
    reference_cost: f64,
    opts: &VerifyOptions,
    clock: &dyn Clock,
) -> Result<VerificationReport, VerifyError> {
    match metric {
        Metric::NuG => worst_case_generation(enc, case, opts, clock),
        Metric::NuLine => worst_case_line(enc, case, adm, opts, clock),
        Metric::NuDist => worst_case_distance(enc, case, adm, opts, clock),
        Metric::NuOpt => worst_case_suboptimality(enc, case, adm, reference_cost, opts, clock),
    }
}

/// Settings shared by every domain of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub metrics: Vec<Metric>,
    pub milp_bounds: bool,
    pub tighten: TightenOptions,
    pub mode: StabilityMode,
    pub verify: VerifyOptions,
    pub reference_cost: f64,
}

/// Reports of one reduced domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub delta: f64,
    pub reports: Vec<VerificationReport>,
}

/// Re-derives bounds and encodings of the same network on each domain
/// `base.reduced(delta)` and verifies every requested metric.
/// Dataset-based phase fixing is not used here, the flags would only hold
/// on the original domain.
#[allow(clippy::too_many_arguments)]
pub fn domain_reduction_sweep<E: Executor>(
    net: &MlpNetwork,
    case: &GridCase,
    adm: &AdmittanceSet,
    base: &InputDomain,
    deltas: &[f64],
    cfg: &SweepConfig,
    exec: &E,
    clock: &(dyn Clock + Sync),
) -> Result<Vec<SweepPoint>, VerifyError> {
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let domain = base.reduced(delta);
        let bounds = bound_cascade(net, &domain, cfg.milp_bounds, &cfg.tighten, exec, clock)?;
        let enc = encode_network(net, case, &domain, &bounds, StabilityMode::Certified, None)?;
        let mut reports = Vec::with_capacity(cfg.metrics.len());
        for &m in &cfg.metrics {
            reports.push(worst_case(
                m,
                &enc,
                case,
                adm,
                cfg.reference_cost,
                &cfg.verify,
                clock,
            )?);
        }
        out.push(SweepPoint { delta, reports });
    }
    Ok(out)
}

/// Weight-norm Lipschitz constant of the network in MW per MW under the
/// infinity norm, from the folded layers.
pub fn lipschitz_inf(net: &MlpNetwork) -> f64 {
    net.folded()
        .iter()
        .map(|(w, _): &(Matrix, Vec<f64>)| w.norm_inf())
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcopf::{dispatch_cost, solve_dcopf};
    use crate::encode::{interval_bounds, Sequential};
    use crate::grid::tests::{ring3, two_bus};
    use crate::grid::{Bus, Generator, Load};
    use crate::lp::NoClock;
    use crate::metrics;
    use crate::mlp::complete_dispatch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affine_net(w: f64, b: f64) -> MlpNetwork {
        // relu(x) with x >= 0 is the identity, so the net is w x + b on the domain.
        MlpNetwork::from_parameters(
            vec![Matrix::from_rows(&[vec![1.0]]), Matrix::from_rows(&[vec![w]])],
            vec![vec![0.0], vec![b]],
        )
        .unwrap()
    }

    fn encode(net: &MlpNetwork, case: &GridCase, domain: &InputDomain) -> NetworkEncoding {
        let b = bound_cascade(
            net,
            domain,
            true,
            &TightenOptions::default(),
            &Sequential,
            &NoClock,
        )
        .unwrap();
        encode_network(net, case, domain, &b, StabilityMode::Certified, None).unwrap()
    }

    /// Single bus, a zero-capacity slack placeholder and one real generator.
    fn one_gen(cost: f64) -> GridCase {
        GridCase {
            name: "one_gen".into(),
            buses: vec![Bus { label: "1".into() }],
            lines: vec![],
            gens: vec![
                Generator {
                    bus: 0,
                    p_min: 0.0,
                    p_max: 0.0,
                    cost: 0.0,
                },
                Generator {
                    bus: 0,
                    p_min: 10.0,
                    p_max: 200.0,
                    cost,
                },
            ],
            loads: vec![Load {
                bus: 0,
                p_nominal: 100.0,
            }],
            slack_bus: 0,
            base_mva: 100.0,
        }
    }

    #[test]
    fn radial_overload_is_found_at_full_load() {
        // two_bus: the only generator sits at the slack bus, the load is remote.
        let mut case = two_bus();
        case.gens.push(Generator {
            bus: 1,
            p_min: 0.0,
            p_max: 100.0,
            cost: 30.0,
        });
        let adm = AdmittanceSet::build(&case).unwrap();
        let net = affine_net(0.0, 0.0);
        let domain = InputDomain::uniform_box(&case, 0.0, 1.0);
        let enc = encode(&net, &case, &domain);
        let r = worst_case_line(&enc, &case, &adm, &VerifyOptions::default(), &NoClock).unwrap();
        assert!((r.value - 20.0).abs() < 1e-6, "{}", r.value);
        assert!((r.maximizer_load[0] - 100.0).abs() < 1e-6);
        assert_eq!(r.attaining_index, Some(0));
        assert!(r.is_exact());
        assert_eq!(r.boundary_fraction, 1.0);
    }

    #[test]
    fn unlimited_lines_cannot_be_violated() {
        let mut case = ring3();
        for l in &mut case.lines {
            l.flow_limit = f64::INFINITY;
        }
        let adm = AdmittanceSet::build(&case).unwrap();
        let net = affine_net(3.0, -50.0);
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let enc = encode(&net, &case, &domain);
        let r = worst_case_line(&enc, &case, &adm, &VerifyOptions::default(), &NoClock).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.terms.is_empty());
    }

    #[test]
    fn constant_overshoot_of_five_megawatts() {
        let case = ring3();
        // generator 1 has p_max 150
        let net = affine_net(0.0, 155.0);
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let enc = encode(&net, &case, &domain);
        let r = worst_case_generation(&enc, &case, &VerifyOptions::default(), &NoClock).unwrap();
        // the slack completion load - 155 stays within [-83, -35] MW, i.e. at
        // most 83 MW below its minimum of 0
        let slack_worst = 155.0 - 0.6 * 120.0;
        assert!((r.value - slack_worst).abs() < 1e-6, "{}", r.value);
        assert_eq!(r.attaining_index, Some(0));
        let mut case2 = case.clone();
        case2.gens[0].p_min = -1000.0;
        let enc = encode(&net, &case2, &domain);
        let r = worst_case_generation(&enc, &case2, &VerifyOptions::default(), &NoClock).unwrap();
        assert!((r.value - 5.0).abs() < 1e-6);
        assert_eq!(r.attaining_index, Some(1));
    }

    #[test]
    fn toy_bilevel_closed_form() {
        let (c, d) = (7.0, 4.0);
        let case = one_gen(c);
        let adm = AdmittanceSet::build(&case).unwrap();
        let net = affine_net(1.0, d);
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let enc = encode(&net, &case, &domain);
        let opts = VerifyOptions::default();
        let dist = worst_case_distance(&enc, &case, &adm, &opts, &NoClock).unwrap();
        assert!((dist.value - 100.0 * d / 190.0).abs() < 1e-6, "{}", dist.value);
        assert!((dist.raw_value - d).abs() < 1e-6);
        assert!(dist.big_m_audit.as_ref().unwrap().passed);
        let opt = worst_case_suboptimality(&enc, &case, &adm, 1000.0, &opts, &NoClock).unwrap();
        assert!((opt.raw_value - c * d).abs() < 1e-6, "{}", opt.raw_value);
        assert!((opt.value - 100.0 * c * d / 1000.0).abs() < 1e-9);
    }

    #[test]
    fn tiny_big_m_is_caught_by_the_audit() {
        let case = one_gen(7.0);
        let adm = AdmittanceSet::build(&case).unwrap();
        let net = affine_net(1.0, 4.0);
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let enc = encode(&net, &case, &domain);
        let opts = VerifyOptions {
            big_m: 0.01,
            big_m_retries: 0,
            ..VerifyOptions::default()
        };
        // generator slacks are at least 50 MW, so every KKT point is cut off
        assert_eq!(
            worst_case_distance(&enc, &case, &adm, &opts, &NoClock),
            Err(VerifyError::BigMBinding(0.01))
        );
        let opts = VerifyOptions {
            big_m: 0.01,
            big_m_retries: 8,
            ..VerifyOptions::default()
        };
        let r = worst_case_distance(&enc, &case, &adm, &opts, &NoClock).unwrap();
        // 0.01 * 10^5 is the first constant above the 140 MW upper slack
        assert!((r.big_m.unwrap() - 1000.0).abs() < 1e-6);
        assert!(r.big_m_audit.unwrap().passed);
        assert!((r.value - 100.0 * 4.0 / 190.0).abs() < 1e-6);
    }

    #[test]
    fn perfect_copy_has_zero_guarantees() {
        // ring3 with uncongested lines dispatches the cheap generator 1 up
        // to its limit: for loads in [72, 120] it takes all of it.
        let case = ring3();
        let adm = AdmittanceSet::build(&case).unwrap();
        let net = affine_net(1.0, 0.0);
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let enc = encode(&net, &case, &domain);
        let opts = VerifyOptions::default();
        let nominal = solve_dcopf(&case, &adm, &case.nominal_loads()).unwrap();
        for m in Metric::ALL {
            let r = worst_case(m, &enc, &case, &adm, nominal.objective_cost, &opts, &NoClock).unwrap();
            assert!(r.value.abs() < 1e-6, "{} = {}", m.as_str(), r.value);
        }
    }

    fn small_trained_like_net(seed: u64) -> MlpNetwork {
        let mut net = MlpNetwork::random(&[1, 6, 6, 1], seed);
        net.x_scale.min = vec![72.0];
        net.x_scale.range = vec![48.0];
        net.y_scale.min = vec![40.0];
        net.y_scale.range = vec![120.0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &mut net.biases {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        net
    }

    #[test]
    fn guarantees_dominate_samples_and_match_maximizers() {
        let case = ring3();
        let adm = AdmittanceSet::build(&case).unwrap();
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let reference = solve_dcopf(&case, &adm, &case.nominal_loads())
            .unwrap()
            .objective_cost;
        let opts = VerifyOptions::default();
        for seed in 0..3 {
            let net = small_trained_like_net(seed);
            let enc = encode(&net, &case, &domain);
            let eval = |m: Metric, p: f64| {
                let full = complete_dispatch(&case, &net.forward(&[p]), &[p]);
                let opt = solve_dcopf(&case, &adm, &[p]).unwrap();
                match m {
                    Metric::NuG => metrics::gen_violation(&case, &full).value,
                    Metric::NuLine => metrics::line_violation(&case, &adm, &[p], &full).value,
                    Metric::NuDist => metrics::distance_pct(&case, &full, &opt.p_g).value,
                    Metric::NuOpt => 100.0 * (dispatch_cost(&case, &full) - opt.objective_cost) / reference,
                }
            };
            for m in Metric::ALL {
                let r = worst_case(m, &enc, &case, &adm, reference, &opts, &NoClock).unwrap();
                assert!(r.is_exact());
                for k in 0..=200 {
                    let p = 72.0 + 48.0 * k as f64 / 200.0;
                    assert!(r.value >= eval(m, p) - 1e-6, "{} seed {seed}", m.as_str());
                }
                let at = eval(m, r.maximizer_load[0]);
                assert!(
                    (at - r.value).abs() < 1e-4,
                    "{}: {} vs {}",
                    m.as_str(),
                    at,
                    r.value
                );
            }
        }
    }

    #[test]
    fn disjunctive_strategy_agrees_with_per_term() {
        let case = ring3();
        let adm = AdmittanceSet::build(&case).unwrap();
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let reference = solve_dcopf(&case, &adm, &case.nominal_loads())
            .unwrap()
            .objective_cost;
        let net = small_trained_like_net(4);
        let enc = encode(&net, &case, &domain);
        let per = VerifyOptions::default();
        let dis = VerifyOptions {
            strategy: Strategy::Disjunctive,
            ..VerifyOptions::default()
        };
        for m in Metric::ALL {
            let a = worst_case(m, &enc, &case, &adm, reference, &per, &NoClock).unwrap();
            let b = worst_case(m, &enc, &case, &adm, reference, &dis, &NoClock).unwrap();
            assert!(
                (a.value - b.value).abs() < 1e-5,
                "{}: {} vs {}",
                m.as_str(),
                a.value,
                b.value
            );
        }
    }

    #[test]
    fn shrinking_the_domain_never_raises_a_guarantee() {
        let case = ring3();
        let adm = AdmittanceSet::build(&case).unwrap();
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let reference = solve_dcopf(&case, &adm, &case.nominal_loads())
            .unwrap()
            .objective_cost;
        let net = small_trained_like_net(1);
        let cfg = SweepConfig {
            metrics: Metric::ALL.to_vec(),
            milp_bounds: false,
            tighten: TightenOptions::default(),
            mode: StabilityMode::Certified,
            verify: VerifyOptions::default(),
            reference_cost: reference,
        };
        let deltas = [0.0, 0.05, 0.1, 0.2];
        let sweep =
            domain_reduction_sweep(&net, &case, &adm, &domain, &deltas, &cfg, &Sequential, &NoClock).unwrap();
        for w in sweep.windows(2) {
            for (a, b) in w[0].reports.iter().zip(&w[1].reports) {
                assert!(b.value <= a.value + 1e-6, "{}", a.metric.as_str());
            }
        }
        let last = &sweep[3];
        assert!((last.reports[0].maximizer_load[0] - 96.0).abs() < 1e-9);
    }

    #[test]
    fn interval_only_bounds_give_the_same_answer() {
        let case = ring3();
        let adm = AdmittanceSet::build(&case).unwrap();
        let domain = InputDomain::uniform_box(&case, 0.6, 1.0);
        let net = small_trained_like_net(2);
        let tight = encode(&net, &case, &domain);
        let loose_b = interval_bounds(&net, &domain).unwrap();
        let loose = encode_network(&net, &case, &domain, &loose_b, StabilityMode::Certified, None).unwrap();
        assert!(loose.free_neurons() >= tight.free_neurons());
        let opts = VerifyOptions::default();
        let a = worst_case_line(&tight, &case, &adm, &opts, &NoClock).unwrap();
        let b = worst_case_line(&loose, &case, &adm, &opts, &NoClock).unwrap();
        assert!((a.value - b.value).abs() < 1e-6);
    }

    #[test]
    fn audit_of_an_interior_point() {
        let mut m = LinearModel::new();
        let x = m.add_var(0.0, 10.0);
        let r = m.add_binary();
        let mut e = LinExpr::var(x);
        e.add_term(r, -100.0);
        m.add_big_m_constraint(
            e,
            Relation::Le,
            0.0,
            crate::lp::BigMTag {
                m: 100.0,
                indicator: r,
                relaxed_at: 1.0,
            },
        );
        let a = audit_big_m(&m, &[5.0, 1.0]);
        assert!(a.passed && (a.min_slack - 95.0).abs() < 1e-12);
        assert!(audit_big_m(&m, &[5.0, 0.0]).slacks.is_empty());
        assert!(!audit_big_m(&m, &[100.0, 1.0]).passed);
    }
}
