//! Deterministic best-bound branch-and-bound over binary variables.
//!
//! Branching picks the most fractional binary (lowest index on ties). Open
//! nodes are ordered by their parent's LP bound; among equal bounds the most
//! recently created node is processed first. Children re-solve from the
//! parent's basis with the dual simplex.

use alloc::collections::BinaryHeap;
use alloc::rc::Rc;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::simplex::{Basis, LpProblem, Outcome, Simplex};
use super::{Clock, LinearModel, LpError, Sense, SolveResult, SolverParams, Status, VarKind};
use crate::math::abs;

struct Node {
    id: usize,
    /// Minimization-sense lower bound inherited from the parent LP.
    bound: f64,
    fixings: Rc<Fixings>,
    basis: Option<Rc<Basis>>,
}

/// Persistent list of (variable, value) branching decisions.
struct Fixings {
    var: usize,
    value: f64,
    parent: Option<Rc<Fixings>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: the "greatest" node is the one with the
    // smallest bound, then the largest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then(self.id.cmp(&other.id))
    }
}

/// Solves `model` with binaries enforced. Deterministic for fixed parameters
/// when no time limit is set.
pub fn solve_milp(
    model: &LinearModel,
    params: &SolverParams,
    clock: &dyn Clock,
) -> Result<SolveResult, LpError> {
    model.validate()?;
    let t0 = clock.seconds();
    let sign = match model.sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let obj_const = model.objective_constant();
    let n = model.num_vars();
    let binaries: Vec<usize> = (0..n).filter(|&j| model.kinds()[j] == VarKind::Binary).collect();
    let root_lo: Vec<f64> = model.lower().to_vec();
    let root_hi: Vec<f64> = model.upper().to_vec();

    let mut spx = Simplex::new(LpProblem::from_model(model));
    // Minimization-sense threshold: only nodes strictly below it matter.
    let cutoff_min = params.cutoff.map(|c| sign * (c - obj_const));
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut node_count = 0usize;
    let mut stop: Option<Status> = None;
    let mut root_unbounded = false;
    let root_fix = Rc::new(Fixings {
        var: usize::MAX,
        value: 0.0,
        parent: None,
    });
    heap.push(Node {
        id: next_id,
        bound: f64::NEG_INFINITY,
        fixings: root_fix,
        basis: None,
    });
    next_id += 1;
    let mut current_fixed: Vec<usize> = Vec::new();

    let abs_tol = 1e-9;
    let threshold = |inc: &Option<(f64, Vec<f64>)>| -> f64 {
        match (inc, cutoff_min) {
            (Some((v, _)), Some(c)) => v.min(c),
            (Some((v, _)), None) => *v,
            (None, Some(c)) => c,
            (None, None) => f64::INFINITY,
        }
    };
    let prune_limit = |inc: &Option<(f64, Vec<f64>)>| -> f64 {
        let t = threshold(inc);
        if !t.is_finite() {
            return t;
        }
        let rel = match inc {
            Some((v, _)) => params.gap_tol * abs(*v).max(1.0),
            None => 0.0,
        };
        t - abs_tol - rel
    };

    while let Some(node) = heap.pop() {
        if node.bound >= prune_limit(&incumbent) {
            continue;
        }
        if let Some(limit) = params.time_limit {
            if clock.seconds() - t0 >= limit {
                heap.push(node);
                stop = Some(Status::TimeLimit);
                break;
            }
        }
        if let Some(max_nodes) = params.max_nodes {
            if node_count >= max_nodes {
                heap.push(node);
                stop = Some(Status::NodeLimit);
                break;
            }
        }
        node_count += 1;

        // Reset previous fixings, apply this node's.
        for &j in &current_fixed {
            spx.set_bounds(j, root_lo[j], root_hi[j]);
        }
        current_fixed.clear();
        let mut f = Some(&node.fixings);
        while let Some(fx) = f {
            if fx.var != usize::MAX {
                spx.set_bounds(fx.var, fx.value, fx.value);
                current_fixed.push(fx.var);
            }
            f = fx.parent.as_ref();
        }
        match &node.basis {
            Some(b) => spx.restore(b),
            None => spx.bounds_changed(),
        }
        let outcome = spx.solve()?;
        match outcome {
            Outcome::Infeasible => continue,
            Outcome::Unbounded => {
                if node.id == 0 {
                    root_unbounded = true;
                    break;
                }
                continue;
            }
            Outcome::Optimal => {}
        }
        let lp_obj = spx.objective();
        if lp_obj >= prune_limit(&incumbent) {
            continue;
        }
        let x = spx.values();
        let mut branch: Option<(usize, f64)> = None;
        for &j in &binaries {
            let v = x[j];
            let frac = v.min(1.0 - v).max(0.0);
            if frac > params.int_tol && branch.is_none_or(|(_, bf)| frac > bf + 1e-12) {
                branch = Some((j, frac));
            }
        }
        match branch {
            None => {
                let mut sol = x.to_vec();
                for &j in &binaries {
                    sol[j] = if sol[j] > 0.5 { 1.0 } else { 0.0 };
                }
                incumbent = Some((lp_obj, sol));
            }
            Some((j, _)) => {
                let basis = Rc::new(spx.snapshot());
                for value in [0.0, 1.0] {
                    heap.push(Node {
                        id: next_id,
                        bound: lp_obj,
                        fixings: Rc::new(Fixings {
                            var: j,
                            value,
                            parent: Some(node.fixings.clone()),
                        }),
                        basis: Some(basis.clone()),
                    });
                    next_id += 1;
                }
            }
        }
        if params.gap_tol > 0.0 {
            if let Some((inc, _)) = &incumbent {
                let best = heap.iter().map(|n| n.bound).fold(*inc, f64::min);
                if abs(inc - best) / abs(*inc).max(1.0) <= params.gap_tol {
                    break;
                }
            }
        }
    }

    let wall_time = clock.seconds() - t0;
    if root_unbounded {
        return Ok(empty_result(
            Status::Unbounded,
            node_count,
            spx.iterations,
            wall_time,
        ));
    }
    // Best bound over what remains open (min sense).
    let open_bound = heap
        .iter()
        .filter(|n| n.bound < prune_limit(&incumbent))
        .map(|n| n.bound)
        .fold(f64::INFINITY, f64::min);
    let status = match stop {
        Some(s) => s,
        None => match (&incumbent, cutoff_min) {
            (Some(_), _) => Status::Optimal,
            (None, Some(_)) => Status::Cutoff,
            (None, None) => Status::Infeasible,
        },
    };
    let to_user = |v: f64| sign * v + obj_const;
    match incumbent {
        Some((inc, x)) => {
            let bound_min = open_bound.min(inc);
            let gap = abs(inc - bound_min) / abs(to_user(inc)).max(1.0);
            let status = if status != Status::Optimal && gap <= params.gap_tol {
                Status::Optimal
            } else {
                status
            };
            Ok(SolveResult {
                status,
                objective: model.objective_value(&x),
                x,
                duals: Vec::new(),
                reduced_costs: Vec::new(),
                bound: to_user(bound_min),
                milp_gap: gap,
                node_count,
                iterations: spx.iterations,
                wall_time,
            })
        }
        None => {
            let mut r = empty_result(status, node_count, spx.iterations, wall_time);
            if open_bound.is_finite() {
                r.bound = to_user(open_bound);
            } else if let Some(c) = cutoff_min {
                r.bound = to_user(c);
            }
            Ok(r)
        }
    }
}

fn empty_result(status: Status, node_count: usize, iterations: usize, wall_time: f64) -> SolveResult {
    SolveResult {
        status,
        x: Vec::new(),
        duals: Vec::new(),
        reduced_costs: Vec::new(),
        objective: f64::NAN,
        bound: f64::NAN,
        milp_gap: f64::NAN,
        node_count,
        iterations,
        wall_time,
    }
}
