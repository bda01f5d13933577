//! DC optimal power flow: the LP, its solution with duals, KKT checks and
//! the KKT system as MILP constraints for bilevel problems.
//!
//! Rows are in MW: balance `M_g p_g - base * B_bus theta = M_d p_d`, line
//! limits `-F <= base * B_line theta <= F` as two single-sided rows, and
//! generator limits as rows. The slack angle is not a variable.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{AdmittanceSet, GridCase};
use crate::lp::{solve_lp, BigMTag, LinExpr, LinearModel, LpError, Relation, RowId, Sense, Status, VarId};
use crate::math::abs;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DcOpfError {
    #[error("the DC-OPF is infeasible for this load")]
    Infeasible,
    #[error("the DC-OPF is unbounded")]
    Unbounded,
    #[error("expected {expected} loads, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Variable and row handles of a model built by [`build_dcopf`].
#[derive(Debug, Clone)]
pub struct DcOpfLayout {
    pub p_g: Vec<VarId>,
    /// `None` at the slack bus.
    pub theta: Vec<Option<VarId>>,
    pub balance: Vec<RowId>,
    /// `None` for lines without a finite limit.
    pub line_max: Vec<Option<RowId>>,
    pub line_min: Vec<Option<RowId>>,
    pub gen_max: Vec<RowId>,
    pub gen_min: Vec<RowId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcOpfSolution {
    pub p_g: Vec<f64>,
    /// Bus angles in rad, zero at the slack.
    pub theta: Vec<f64>,
    pub objective_cost: f64,
    pub lambda: Vec<f64>,
    pub mu_line_min: Vec<f64>,
    pub mu_line_max: Vec<f64>,
    pub mu_g_min: Vec<f64>,
    pub mu_g_max: Vec<f64>,
}

/// `base * (B theta)` contribution of bus `b` to a balance row.
fn angle_terms(adm_row: &[f64], theta: &[Option<VarId>], scale: f64, expr: &mut LinExpr) {
    for (j, coef) in adm_row.iter().enumerate() {
        if *coef != 0.0 {
            if let Some(v) = theta[j] {
                expr.add_term(v, scale * coef);
            }
        }
    }
}

fn check_len(case: &GridCase, load: usize) -> Result<(), DcOpfError> {
    if load != case.n_loads() {
        return Err(DcOpfError::Dimension {
            expected: case.n_loads(),
            got: load,
        });
    }
    Ok(())
}

/// Builds the DC-OPF LP for the given per-load demand in MW.
pub fn build_dcopf(case: &GridCase, adm: &AdmittanceSet, load: &[f64]) -> (LinearModel, DcOpfLayout) {
    let mut m = LinearModel::new();
    let base = case.base_mva;
    let p_g: Vec<VarId> = case.gens.iter().map(|_| m.add_free_var()).collect();
    let theta: Vec<Option<VarId>> = (0..case.n_buses())
        .map(|b| (b != case.slack_bus).then(|| m.add_free_var()))
        .collect();
    let mut demand = vec![0.0; case.n_buses()];
    for (l, p) in case.loads.iter().zip(load) {
        demand[l.bus] += p;
    }
    let mut balance = Vec::with_capacity(case.n_buses());
    for b in 0..case.n_buses() {
        let mut e = LinExpr::new();
        for (g, gen) in case.gens.iter().enumerate() {
            if gen.bus == b {
                e.add_term(p_g[g], 1.0);
            }
        }
        angle_terms(adm.b_bus.row(b), &theta, -base, &mut e);
        balance.push(m.add_constraint(e, Relation::Eq, demand[b]));
    }
    let mut line_max = Vec::with_capacity(case.n_lines());
    let mut line_min = Vec::with_capacity(case.n_lines());
    for (i, line) in case.lines.iter().enumerate() {
        if !line.flow_limit.is_finite() {
            line_max.push(None);
            line_min.push(None);
            continue;
        }
        let mut e = LinExpr::new();
        angle_terms(adm.b_line.row(i), &theta, base, &mut e);
        line_max.push(Some(m.add_constraint(e.clone(), Relation::Le, line.flow_limit)));
        line_min.push(Some(m.add_constraint(e, Relation::Ge, -line.flow_limit)));
    }
    let mut gen_max = Vec::with_capacity(case.n_gens());
    let mut gen_min = Vec::with_capacity(case.n_gens());
    for (g, gen) in case.gens.iter().enumerate() {
        gen_max.push(m.add_constraint(LinExpr::var(p_g[g]), Relation::Le, gen.p_max));
        gen_min.push(m.add_constraint(LinExpr::var(p_g[g]), Relation::Ge, gen.p_min));
    }
    let mut obj = LinExpr::new();
    for (g, gen) in case.gens.iter().enumerate() {
        obj.add_term(p_g[g], gen.cost);
    }
    m.set_objective(Sense::Minimize, obj);
    (
        m,
        DcOpfLayout {
            p_g,
            theta,
            balance,
            line_max,
            line_min,
            gen_max,
            gen_min,
        },
    )
}

/// Solves the DC-OPF and maps the LP shadow prices onto `lambda` and the
/// non-negative `mu` multipliers of the KKT system.
pub fn solve_dcopf(case: &GridCase, adm: &AdmittanceSet, load: &[f64]) -> Result<DcOpfSolution, DcOpfError> {
    check_len(case, load.len())?;
    let (model, lay) = build_dcopf(case, adm, load);
    let r = solve_lp(&model)?;
    match r.status {
        Status::Optimal => {}
        Status::Infeasible => return Err(DcOpfError::Infeasible),
        _ => return Err(DcOpfError::Unbounded),
    }
    let y = |row: RowId| r.duals[row.0];
    let theta = lay.theta.iter().map(|t| t.map_or(0.0, |v| r.x[v.0])).collect();
    // Shadow prices are d cost / d rhs; the balance rhs is the demand, so
    // lambda (attached to M_g p_g - M_d p_d - B theta) is its negation.
    Ok(DcOpfSolution {
        p_g: lay.p_g.iter().map(|v| r.x[v.0]).collect(),
        theta,
        objective_cost: r.objective,
        lambda: lay.balance.iter().map(|&row| -y(row)).collect(),
        mu_line_min: lay.line_min.iter().map(|o| o.map_or(0.0, y)).collect(),
        mu_line_max: lay
            .line_max
            .iter()
            .map(|o| o.map_or(0.0, |row| -y(row)))
            .collect(),
        mu_g_min: lay.gen_min.iter().map(|&row| y(row)).collect(),
        mu_g_max: lay.gen_max.iter().map(|&row| -y(row)).collect(),
    })
}

pub fn dispatch_cost(case: &GridCase, p_g: &[f64]) -> f64 {
    case.gens.iter().zip(p_g).map(|(g, p)| g.cost * p).sum()
}

/// Largest residual per group of KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// Gradient of the Lagrangian w.r.t. `p_g` ($/MWh) and `theta` (per unit of base).
    pub stationarity: f64,
    /// `|mu * slack|` over all inequality rows.
    pub complementarity: f64,
    /// Magnitude of the most negative `mu`.
    pub dual_feasibility: f64,
    /// Balance (MW), limit violations (MW) and the slack angle.
    pub primal_feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.dual_feasibility)
            .max(self.primal_feasibility)
    }
}

pub fn kkt_residuals(case: &GridCase, adm: &AdmittanceSet, load: &[f64], s: &DcOpfSolution) -> KktResiduals {
    let base = case.base_mva;
    let mut r = KktResiduals::default();
    let bump = |slot: &mut f64, v: f64| *slot = slot.max(abs(v));

    // c - mu_min + mu_max + M_g^T lambda = 0
    for (g, gen) in case.gens.iter().enumerate() {
        let v = gen.cost - s.mu_g_min[g] + s.mu_g_max[g] + s.lambda[gen.bus];
        bump(&mut r.stationarity, v);
    }
    // B_line^T (mu_max - mu_min) - B_bus lambda = 0, non-slack buses
    for &b in &adm.non_slack {
        let mut v = 0.0;
        for i in 0..case.n_lines() {
            v += adm.b_line[(i, b)] * (s.mu_line_max[i] - s.mu_line_min[i]);
        }
        for j in 0..case.n_buses() {
            v -= adm.b_bus[(b, j)] * s.lambda[j];
        }
        bump(&mut r.stationarity, v);
    }

    let flows: Vec<f64> = adm.b_line.mul_vec(&s.theta).iter().map(|f| f * base).collect();
    for (i, line) in case.lines.iter().enumerate() {
        let f = line.flow_limit;
        if f.is_finite() {
            bump(&mut r.complementarity, s.mu_line_min[i] * (-f - flows[i]));
            bump(&mut r.complementarity, s.mu_line_max[i] * (flows[i] - f));
        } else {
            bump(&mut r.complementarity, s.mu_line_min[i]);
            bump(&mut r.complementarity, s.mu_line_max[i]);
        }
        bump(&mut r.primal_feasibility, (abs(flows[i]) - f).max(0.0));
    }
    for (g, gen) in case.gens.iter().enumerate() {
        let p = s.p_g[g];
        bump(&mut r.complementarity, s.mu_g_min[g] * (gen.p_min - p));
        bump(&mut r.complementarity, s.mu_g_max[g] * (p - gen.p_max));
        bump(&mut r.primal_feasibility, (gen.p_min - p).max(0.0));
        bump(&mut r.primal_feasibility, (p - gen.p_max).max(0.0));
    }
    for mu in s
        .mu_line_min
        .iter()
        .chain(&s.mu_line_max)
        .chain(&s.mu_g_min)
        .chain(&s.mu_g_max)
    {
        bump(&mut r.dual_feasibility, mu.min(0.0));
    }
    let inj = case.bus_injections(&s.p_g, load);
    let b_theta = adm.b_bus.mul_vec(&s.theta);
    for b in 0..case.n_buses() {
        bump(&mut r.primal_feasibility, inj[b] - base * b_theta[b]);
    }
    bump(&mut r.primal_feasibility, s.theta[case.slack_bus]);
    r
}

/// Handles of a DC-OPF KKT system embedded in a larger model.
#[derive(Debug, Clone)]
pub struct KktEmbedding {
    pub p_g: Vec<VarId>,
    pub theta: Vec<Option<VarId>>,
    pub lambda: Vec<VarId>,
    pub mu_line_min: Vec<Option<VarId>>,
    pub mu_line_max: Vec<Option<VarId>>,
    pub mu_g_min: Vec<VarId>,
    pub mu_g_max: Vec<VarId>,
    /// Complementarity indicators; `r = 1` means the row may be slack.
    pub indicators: Vec<VarId>,
    pub big_m: f64,
}

/// Adds primal feasibility, stationarity, dual feasibility and big-M
/// linearized complementary slackness of the DC-OPF to `m`, with the
/// per-load demand given as affine expressions of existing variables.
///
/// Each inequality with slack `s >= 0` and multiplier `mu >= 0` gets a
/// binary `r` with `s <= r M` and `mu <= (1 - r) M`.
pub fn embed_kkt(
    m: &mut LinearModel,
    case: &GridCase,
    adm: &AdmittanceSet,
    load: &[LinExpr],
    big_m: f64,
) -> KktEmbedding {
    let base = case.base_mva;
    let p_g: Vec<VarId> = case.gens.iter().map(|_| m.add_free_var()).collect();
    let theta: Vec<Option<VarId>> = (0..case.n_buses())
        .map(|b| (b != case.slack_bus).then(|| m.add_free_var()))
        .collect();
    let lambda: Vec<VarId> = (0..case.n_buses()).map(|_| m.add_free_var()).collect();
    let mut indicators = Vec::new();

    // Nodal balance with variable demand.
    for b in 0..case.n_buses() {
        let mut e = LinExpr::new();
        for (g, gen) in case.gens.iter().enumerate() {
            if gen.bus == b {
                e.add_term(p_g[g], 1.0);
            }
        }
        for (l, d) in case.loads.iter().zip(load) {
            if l.bus == b {
                e.add_scaled(d, -1.0);
            }
        }
        angle_terms(adm.b_bus.row(b), &theta, -base, &mut e);
        m.add_constraint(e, Relation::Eq, 0.0);
    }

    let mut complementarity = |m: &mut LinearModel, slack: LinExpr, mu: VarId| {
        let r = m.add_binary();
        indicators.push(r);
        let mut a = slack;
        a.add_term(r, -big_m);
        m.add_big_m_constraint(
            a,
            Relation::Le,
            0.0,
            BigMTag {
                m: big_m,
                indicator: r,
                relaxed_at: 1.0,
            },
        );
        let mut b = LinExpr::var(mu);
        b.add_term(r, big_m);
        m.add_big_m_constraint(
            b,
            Relation::Le,
            big_m,
            BigMTag {
                m: big_m,
                indicator: r,
                relaxed_at: 0.0,
            },
        );
    };

    let mut mu_line_min = Vec::with_capacity(case.n_lines());
    let mut mu_line_max = Vec::with_capacity(case.n_lines());
    for (i, line) in case.lines.iter().enumerate() {
        if !line.flow_limit.is_finite() {
            mu_line_min.push(None);
            mu_line_max.push(None);
            continue;
        }
        let mut flow = LinExpr::new();
        angle_terms(adm.b_line.row(i), &theta, base, &mut flow);
        let f = line.flow_limit;
        m.add_constraint(flow.clone(), Relation::Le, f);
        m.add_constraint(flow.clone(), Relation::Ge, -f);
        let lo = m.add_var(0.0, f64::INFINITY);
        let hi = m.add_var(0.0, f64::INFINITY);
        // slack of the lower limit: flow + F
        let mut s_lo = flow.clone();
        s_lo.add_constant(f);
        complementarity(m, s_lo, lo);
        // slack of the upper limit: F - flow
        let mut s_hi = flow.scaled(-1.0);
        s_hi.add_constant(f);
        complementarity(m, s_hi, hi);
        mu_line_min.push(Some(lo));
        mu_line_max.push(Some(hi));
    }
    let mut mu_g_min = Vec::with_capacity(case.n_gens());
    let mut mu_g_max = Vec::with_capacity(case.n_gens());
    for (g, gen) in case.gens.iter().enumerate() {
        m.add_constraint(LinExpr::var(p_g[g]), Relation::Le, gen.p_max);
        m.add_constraint(LinExpr::var(p_g[g]), Relation::Ge, gen.p_min);
        let lo = m.add_var(0.0, f64::INFINITY);
        let hi = m.add_var(0.0, f64::INFINITY);
        let mut s_lo = LinExpr::var(p_g[g]);
        s_lo.add_constant(-gen.p_min);
        complementarity(m, s_lo, lo);
        let mut s_hi = LinExpr::term(p_g[g], -1.0);
        s_hi.add_constant(gen.p_max);
        complementarity(m, s_hi, hi);
        mu_g_min.push(lo);
        mu_g_max.push(hi);
    }

    // c - mu_min + mu_max + M_g^T lambda = 0
    for (g, gen) in case.gens.iter().enumerate() {
        let mut e = LinExpr::new();
        e.add_term(mu_g_min[g], -1.0)
            .add_term(mu_g_max[g], 1.0)
            .add_term(lambda[gen.bus], 1.0);
        m.add_constraint(e, Relation::Eq, -gen.cost);
    }
    // B_line^T (mu_max - mu_min) - B_bus lambda = 0 at non-slack buses
    for &b in &adm.non_slack {
        let mut e = LinExpr::new();
        for i in 0..case.n_lines() {
            let k = adm.b_line[(i, b)];
            if k == 0.0 {
                continue;
            }
            if let (Some(lo), Some(hi)) = (mu_line_min[i], mu_line_max[i]) {
                e.add_term(hi, k).add_term(lo, -k);
            }
        }
        for j in 0..case.n_buses() {
            let k = adm.b_bus[(b, j)];
            if k != 0.0 {
                e.add_term(lambda[j], -k);
            }
        }
        m.add_constraint(e, Relation::Eq, 0.0);
    }

    KktEmbedding {
        p_g,
        theta,
        lambda,
        mu_line_min,
        mu_line_max,
        mu_g_min,
        mu_g_max,
        indicators,
        big_m,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::tests::{ring3, two_bus};
    use crate::grid::{Bus, Generator, Load};
    use crate::lp::{solve_milp, NoClock, SolverParams};
    use alloc::string::ToString;
    use proptest::prelude::*;

    /// Two generators and one load on a single bus.
    pub(crate) fn merit_case() -> GridCase {
        GridCase {
            name: "merit".to_string(),
            buses: vec![Bus {
                label: "1".to_string(),
            }],
            lines: vec![],
            gens: vec![
                Generator {
                    bus: 0,
                    p_min: 0.0,
                    p_max: 60.0,
                    cost: 10.0,
                },
                Generator {
                    bus: 0,
                    p_min: 0.0,
                    p_max: 100.0,
                    cost: 20.0,
                },
            ],
            loads: vec![Load {
                bus: 0,
                p_nominal: 80.0,
            }],
            slack_bus: 0,
            base_mva: 100.0,
        }
    }

    fn solve(case: &GridCase, load: &[f64]) -> DcOpfSolution {
        let adm = AdmittanceSet::build(case).unwrap();
        let s = solve_dcopf(case, &adm, load).unwrap();
        let r = kkt_residuals(case, &adm, load, &s);
        assert!(r.max() <= 1e-6, "{r:?}");
        s
    }

    #[test]
    fn merit_order_dispatch() {
        let c = merit_case();
        let s = solve(&c, &[50.0]);
        assert!((s.p_g[0] - 50.0).abs() < 1e-9 && s.p_g[1].abs() < 1e-9);
        let s = solve(&c, &[80.0]);
        assert!((s.p_g[0] - 60.0).abs() < 1e-9 && (s.p_g[1] - 20.0).abs() < 1e-9);
        assert!((s.objective_cost - 1000.0).abs() < 1e-9);
        // Marginal unit is the expensive one.
        assert!((s.lambda[0] + 20.0).abs() < 1e-9);
        assert!((s.mu_g_max[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn single_generator_takes_the_load() {
        let mut c = merit_case();
        c.gens.truncate(1);
        c.gens[0].p_max = 100.0;
        let adm = AdmittanceSet::build(&c).unwrap();
        let (m, _) = build_dcopf(&c, &adm, &[50.0]);
        assert_eq!(m.num_vars(), 1);
        let s = solve(&c, &[50.0]);
        assert!((s.p_g[0] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn over_capacity_is_infeasible() {
        let c = merit_case();
        let adm = AdmittanceSet::build(&c).unwrap();
        assert_eq!(solve_dcopf(&c, &adm, &[200.0]), Err(DcOpfError::Infeasible));
    }

    #[test]
    fn congested_ring_prices_differ() {
        let mut c = ring3();
        c.lines[1].flow_limit = 50.0;
        let s = solve(&c, &[120.0]);
        let flows: Vec<f64> = AdmittanceSet::build(&c)
            .unwrap()
            .b_line
            .mul_vec(&s.theta)
            .iter()
            .map(|f| f * 100.0)
            .collect();
        assert!((flows[1] - 50.0).abs() < 1e-9);
        assert!(s.mu_line_max[1] > 1e-6);
        assert!((s.p_g.iter().sum::<f64>() - 120.0).abs() < 1e-9);
    }

    #[test]
    fn perturbations_break_the_certificate() {
        let c = ring3();
        let adm = AdmittanceSet::build(&c).unwrap();
        let s = solve_dcopf(&c, &adm, &[100.0]).unwrap();
        let mut bad = s.clone();
        bad.p_g[1] += 1.0;
        assert!(kkt_residuals(&c, &adm, &[100.0], &bad).max() > 1e-3);
        let mut bad = s.clone();
        bad.mu_g_min[0] = -0.25;
        let r = kkt_residuals(&c, &adm, &[100.0], &bad);
        assert_eq!(r.dual_feasibility, 0.25);
    }

    #[test]
    fn two_bus_model_dimensions() {
        let c = two_bus();
        let adm = AdmittanceSet::build(&c).unwrap();
        let (m, lay) = build_dcopf(&c, &adm, &[70.0]);
        assert_eq!(m.num_vars(), 2);
        assert_eq!(lay.balance.len(), 2);
        assert_eq!(m.num_constraints(), 2 + 2 + 2);
    }

    #[test]
    fn embedded_kkt_recovers_the_lp_solution() {
        let mut c = ring3();
        c.lines[1].flow_limit = 50.0;
        let adm = AdmittanceSet::build(&c).unwrap();
        for load in [60.0, 95.0, 120.0] {
            let mut m = LinearModel::new();
            let kkt = embed_kkt(&mut m, &c, &adm, &[LinExpr::constant(load)], 1e5);
            let r = solve_milp(&m, &SolverParams::default(), &NoClock).unwrap();
            assert_eq!(r.status, Status::Optimal);
            let s = solve_dcopf(&c, &adm, &[load]).unwrap();
            for (g, v) in kkt.p_g.iter().enumerate() {
                assert!((r.x[v.0] - s.p_g[g]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_cost_scaling_keeps_dispatch(load in 20.0f64..160.0, k in 0.1f64..50.0) {
            let c = ring3();
            let a = solve(&c, &[load]);
            let mut scaled = c.clone();
            for g in &mut scaled.gens {
                g.cost *= k;
            }
            let b = solve(&scaled, &[load]);
            for (x, y) in a.p_g.iter().zip(&b.p_g) {
                prop_assert!((x - y).abs() < 1e-7);
            }
            prop_assert!((a.p_g.iter().sum::<f64>() - load).abs() < 1e-9);
        }
    }
}
