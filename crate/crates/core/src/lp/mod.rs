//! Linear and mixed-binary linear programs: a model container, a dense
//! bounded-variable simplex, a deterministic branch-and-bound and an LP-format
//! writer.

mod bnb;
mod format;
mod simplex;

use alloc::vec::Vec;
use core::fmt;

pub use bnb::solve_milp;
pub use format::export_lp_format;

use crate::math::abs;

/// Index of a variable inside a [`LinearModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Index of a constraint row inside a [`LinearModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

/// Affine expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        let mut e = Self::new();
        e.add_term(v, coef);
        e
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        if scale == 0.0 {
            return self;
        }
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut e = LinExpr::new();
        e.add_scaled(self, scale);
        e
    }

    /// Sorts terms by variable and merges duplicates, dropping exact zeros.
    pub fn normalized(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for (v, c) in self.terms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        self.terms = merged;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
    }
}

/// Marks a row whose constant is a big-M so solutions can be audited for
/// non-bindingness. The M term switches the row off when binary `indicator`
/// takes the value `relaxed_at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigMTag {
    pub m: f64,
    pub indicator: VarId,
    pub relaxed_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// Sorted, duplicate-free terms.
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub big_m: Option<BigMTag>,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.relation {
            Relation::Le => (a - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - a).max(0.0),
            Relation::Eq => abs(a - self.rhs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("constraint {row} references unknown variable {var}")]
    UnknownVariable { row: usize, var: usize },
    #[error("variable {0} has lower bound above upper bound")]
    InvertedBounds(usize),
    #[error("binary variable {0} has bounds outside [0, 1]")]
    BinaryBounds(usize),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
}

/// Linear objective plus linear constraints over continuous and binary
/// variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    lower: Vec<f64>,
    upper: Vec<f64>,
    kind: Vec<VarKind>,
    objective: Vec<f64>,
    objective_constant: f64,
    sense: Sense,
    constraints: Vec<Constraint>,
}

impl Default for LinearModel {
    fn default() -> Self {
        Self::new()
    }
}

impl LinearModel {
    pub fn new() -> Self {
        Self {
            lower: Vec::new(),
            upper: Vec::new(),
            kind: Vec::new(),
            objective: Vec::new(),
            objective_constant: 0.0,
            sense: Sense::Minimize,
            constraints: Vec::new(),
        }
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> VarId {
        self.lower.push(lower);
        self.upper.push(upper);
        self.kind.push(VarKind::Continuous);
        self.objective.push(0.0);
        VarId(self.lower.len() - 1)
    }

    pub fn add_free_var(&mut self) -> VarId {
        self.add_var(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_binary(&mut self) -> VarId {
        let v = self.add_var(0.0, 1.0);
        self.kind[v.0] = VarKind::Binary;
        v
    }

    /// Adds `expr (rel) rhs`; the expression constant is moved to the right-hand side.
    pub fn add_constraint(&mut self, expr: LinExpr, relation: Relation, rhs: f64) -> RowId {
        self.push_row(expr, relation, rhs, None)
    }

    /// Like [`add_constraint`](Self::add_constraint) but tags the row as carrying a big-M constant.
    pub fn add_big_m_constraint(
        &mut self,
        expr: LinExpr,
        relation: Relation,
        rhs: f64,
        tag: BigMTag,
    ) -> RowId {
        self.push_row(expr, relation, rhs, Some(tag))
    }

    fn push_row(&mut self, expr: LinExpr, relation: Relation, rhs: f64, big_m: Option<BigMTag>) -> RowId {
        let expr = expr.normalized();
        self.constraints.push(Constraint {
            terms: expr.terms,
            relation,
            rhs: rhs - expr.constant,
            big_m,
        });
        RowId(self.constraints.len() - 1)
    }

    pub fn set_objective(&mut self, sense: Sense, expr: LinExpr) {
        self.sense = sense;
        self.objective.iter_mut().for_each(|c| *c = 0.0);
        let expr = expr.normalized();
        for (v, c) in expr.terms {
            self.objective[v.0] = c;
        }
        self.objective_constant = expr.constant;
    }

    pub fn set_bounds(&mut self, v: VarId, lower: f64, upper: f64) {
        self.lower[v.0] = lower;
        self.upper[v.0] = upper;
    }

    pub fn fix(&mut self, v: VarId, value: f64) {
        self.set_bounds(v, value, value);
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.kind.iter().filter(|k| **k == VarKind::Binary).count()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn kind(&self, v: VarId) -> VarKind {
        self.kind[v.0]
    }

    pub fn kinds(&self) -> &[VarKind] {
        &self.kind
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn objective_constant(&self) -> f64 {
        self.objective_constant
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn constraint(&self, r: RowId) -> &Constraint {
        &self.constraints[r.0]
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Checks the structural invariants of the model.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.num_vars();
        for (j, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() {
                return Err(ModelError::NonFinite("variable bounds"));
            }
            if lo > hi {
                return Err(ModelError::InvertedBounds(j));
            }
            if self.kind[j] == VarKind::Binary && (lo < 0.0 || hi > 1.0) {
                return Err(ModelError::BinaryBounds(j));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) || !self.objective_constant.is_finite() {
            return Err(ModelError::NonFinite("objective"));
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(ModelError::NonFinite("constraint right-hand side"));
            }
            for &(v, c) in &row.terms {
                if v.0 >= n {
                    return Err(ModelError::UnknownVariable { row: i, var: v.0 });
                }
                if !c.is_finite() {
                    return Err(ModelError::NonFinite("constraint coefficient"));
                }
            }
        }
        Ok(())
    }

    /// Largest bound or row violation of `x`, and for binaries the distance to {0, 1}.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
            if self.kind[j] == VarKind::Binary {
                worst = worst.max(abs(x[j]).min(abs(x[j] - 1.0)));
            }
        }
        for row in &self.constraints {
            worst = worst.max(row.violation(x));
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    /// Stopped on the wall-clock limit; `objective` is the incumbent (if any), `bound` the proven bound.
    TimeLimit,
    /// Stopped on the node limit.
    NodeLimit,
    /// No solution strictly better than the supplied cutoff exists.
    Cutoff,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::TimeLimit => "time_limit",
            Status::NodeLimit => "node_limit",
            Status::Cutoff => "cutoff",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: Status,
    /// Primal values, empty when no feasible point is known.
    pub x: Vec<f64>,
    /// Row shadow prices `d objective / d rhs` in the model's sense (LP solves only).
    pub duals: Vec<f64>,
    /// `c - A^T y` per variable (LP solves only).
    pub reduced_costs: Vec<f64>,
    /// Objective of `x` (NaN without a feasible point).
    pub objective: f64,
    /// Best proven bound on the optimum in the model's sense.
    pub bound: f64,
    pub milp_gap: f64,
    pub node_count: usize,
    pub iterations: usize,
    pub wall_time: f64,
}

impl SolveResult {
    pub fn has_solution(&self) -> bool {
        !self.x.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("invalid model")]
    Model(#[from] ModelError),
    #[error("numerical failure in the simplex method")]
    Numerical,
}

/// Source of elapsed wall-clock seconds; the core has no clock of its own.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that never advances. Time limits are ignored with it.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Relative MILP gap `|bound - incumbent| / max(1, |incumbent|)` at which to stop.
    pub gap_tol: f64,
    pub time_limit: Option<f64>,
    pub max_nodes: Option<usize>,
    pub feas_tol: f64,
    pub int_tol: f64,
    /// Only solutions strictly better than this objective are of interest.
    pub cutoff: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            gap_tol: 0.0,
            time_limit: None,
            max_nodes: None,
            feas_tol: 1e-6,
            int_tol: 1e-6,
            cutoff: None,
        }
    }
}

/// Solves the LP relaxation of `model` (integrality ignored).
pub fn solve_lp(model: &LinearModel) -> Result<SolveResult, LpError> {
    solve_lp_with(model, &NoClock)
}

pub fn solve_lp_with(model: &LinearModel, clock: &dyn Clock) -> Result<SolveResult, LpError> {
    model.validate()?;
    let t0 = clock.seconds();
    let problem = simplex::LpProblem::from_model(model);
    let mut spx = simplex::Simplex::new(problem);
    let outcome = spx.solve()?;
    let mut res = spx.result(model, outcome);
    res.wall_time = clock.seconds() - t0;
    Ok(res)
}

/// Re-solves a sequence of objectives over one feasible region, warm-starting
/// each solve from the previous optimal basis.
pub struct LpSession {
    model: LinearModel,
    spx: simplex::Simplex,
}

impl LpSession {
    pub fn new(model: LinearModel) -> Result<Self, LpError> {
        model.validate()?;
        let spx = simplex::Simplex::new(simplex::LpProblem::from_model(&model));
        Ok(Self { model, spx })
    }

    pub fn solve_objective(&mut self, sense: Sense, expr: LinExpr) -> Result<SolveResult, LpError> {
        self.model.set_objective(sense, expr);
        self.spx.set_costs(&self.model);
        let outcome = self.spx.solve()?;
        Ok(self.spx.result(&self.model, outcome))
    }
}
