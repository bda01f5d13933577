//! Pointwise evaluation of the four worst-case metrics for one load vector.

use alloc::vec::Vec;

use crate::grid::{AdmittanceSet, GridCase};
use crate::math::abs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    /// Generator limit violation in MW.
    NuG,
    /// Line flow limit violation in MW.
    NuLine,
    /// Largest normalized distance to the optimal dispatch in %.
    NuDist,
    /// Cost above the optimal dispatch in % of the nominal-load cost.
    NuOpt,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::NuG, Metric::NuLine, Metric::NuDist, Metric::NuOpt];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::NuG => "nu_g",
            Metric::NuLine => "nu_line",
            Metric::NuDist => "nu_dist",
            Metric::NuOpt => "nu_opt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Metric::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn unit(self) -> &'static str {
        match self {
            Metric::NuG | Metric::NuLine => "MW",
            Metric::NuDist | Metric::NuOpt => "%",
        }
    }

    /// Whether the metric needs the optimal dispatch (and therefore the
    /// KKT system inside the MILP).
    pub fn is_bilevel(self) -> bool {
        matches!(self, Metric::NuDist | Metric::NuOpt)
    }
}

/// A metric value with the index of the generator or line that attains it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attained {
    pub value: f64,
    pub index: Option<usize>,
}

/// `max_g max(p - p_max, p_min - p, 0)` over a full dispatch.
pub fn gen_violation(case: &GridCase, dispatch: &[f64]) -> Attained {
    let mut best = Attained {
        value: 0.0,
        index: None,
    };
    for (g, (gen, p)) in case.gens.iter().zip(dispatch).enumerate() {
        let v = (p - gen.p_max).max(gen.p_min - p);
        if v > best.value {
            best = Attained {
                value: v,
                index: Some(g),
            };
        }
    }
    best
}

/// `max_l max(|flow| - limit, 0)` with flows from the PTDF of the
/// non-slack injections.
pub fn line_violation(case: &GridCase, adm: &AdmittanceSet, load: &[f64], dispatch: &[f64]) -> Attained {
    let inj = case.bus_injections(dispatch, load);
    let flows = adm
        .line_flows_all_buses(&inj)
        .expect("injections cover every bus");
    let mut best = Attained {
        value: 0.0,
        index: None,
    };
    for (i, (line, f)) in case.lines.iter().zip(&flows).enumerate() {
        let v = abs(*f) - line.flow_limit;
        if v > best.value {
            best = Attained {
                value: v,
                index: Some(i),
            };
        }
    }
    best
}

/// Generators with a non-degenerate output range; the normalized distance
/// is undefined for the others.
pub fn distance_gens(case: &GridCase) -> Vec<usize> {
    (0..case.n_gens())
        .filter(|&g| case.gens[g].p_max > case.gens[g].p_min)
        .collect()
}

/// `max_g |p_hat - p| / (p_max - p_min)` in %.
pub fn distance_pct(case: &GridCase, dispatch: &[f64], optimal: &[f64]) -> Attained {
    let mut best = Attained {
        value: 0.0,
        index: None,
    };
    for g in distance_gens(case) {
        let gen = &case.gens[g];
        let v = 100.0 * abs(dispatch[g] - optimal[g]) / (gen.p_max - gen.p_min);
        if best.index.is_none() || v > best.value {
            best = Attained {
                value: v,
                index: Some(g),
            };
        }
    }
    best
}

/// `c^T (p_hat - p)` in $/h.
pub fn suboptimality_raw(case: &GridCase, dispatch: &[f64], optimal: &[f64]) -> f64 {
    case.gens
        .iter()
        .zip(dispatch.iter().zip(optimal))
        .map(|(g, (a, b))| g.cost * (a - b))
        .sum()
}

/// Sub-optimality in % of `reference_cost` (the nominal-load optimum).
pub fn suboptimality_pct(case: &GridCase, dispatch: &[f64], optimal: &[f64], reference_cost: f64) -> f64 {
    100.0 * suboptimality_raw(case, dispatch, optimal) / reference_cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests::two_bus;

    #[test]
    fn generator_violation_picks_the_worst_unit() {
        let case = two_bus();
        assert_eq!(gen_violation(&case, &[205.0]).value, 5.0);
        assert_eq!(gen_violation(&case, &[-3.0]).value, 3.0);
        assert_eq!(gen_violation(&case, &[50.0]).index, None);
    }

    #[test]
    fn radial_line_overload() {
        let case = two_bus();
        let adm = AdmittanceSet::build(&case).unwrap();
        let v = line_violation(&case, &adm, &[100.0], &[100.0]);
        assert!((v.value - 20.0).abs() < 1e-9);
        assert_eq!(v.index, Some(0));
    }

    #[test]
    fn distance_and_cost() {
        let case = two_bus();
        let d = distance_pct(&case, &[60.0], &[50.0]);
        assert!((d.value - 5.0).abs() < 1e-12);
        assert_eq!(suboptimality_raw(&case, &[60.0], &[50.0]), 100.0);
        assert_eq!(Metric::parse("nu_line"), Some(Metric::NuLine));
    }
}
