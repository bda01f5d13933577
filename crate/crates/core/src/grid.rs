//! Network data, incidence maps and DC sensitivity matrices.
//!
//! Susceptances are stored in per-unit on `base_mva`; every other quantity
//! is in MW. Positive line flow runs from `from` to `to`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{Lu, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External bus identifier (for example the MATPOWER bus number).
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series susceptance `1 / x` in p.u.
    pub susceptance: f64,
    /// Symmetric flow limit in MW; `f64::INFINITY` for an unconstrained line.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Linear cost in $/MWh.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    /// Demand at 100 % loading in MW.
    pub p_nominal: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("{what} {index} refers to bus {bus}, but the case has {n_buses} buses")]
    BadBus {
        what: &'static str,
        index: usize,
        bus: usize,
        n_buses: usize,
    },
    #[error("generator {0} has p_min above p_max")]
    InvertedLimits(usize),
    #[error("line {0} must have a positive flow limit")]
    BadFlowLimit(usize),
    #[error("line {0} has a zero or non-finite susceptance")]
    BadSusceptance(usize),
    #[error("no generator is located at slack bus {0}")]
    NoSlackGenerator(usize),
    #[error("the network is not connected (bus {0} is unreachable from the slack bus)")]
    Disconnected(usize),
    #[error("invalid value: {0}")]
    Invalid(&'static str),
    #[error("the slack-reduced admittance matrix is singular")]
    Singular,
    #[error("expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub gens: Vec<Generator>,
    pub loads: Vec<Load>,
    pub slack_bus: usize,
    pub base_mva: f64,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_gens(&self) -> usize {
        self.gens.len()
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    /// Sum of nominal demand in MW.
    pub fn total_nominal_load(&self) -> f64 {
        self.loads.iter().map(|l| l.p_nominal).sum()
    }

    /// Index of the generator that balances the system: the first one at
    /// the slack bus.
    pub fn slack_gen(&self) -> usize {
        self.gens
            .iter()
            .position(|g| g.bus == self.slack_bus)
            .expect("validated case has a slack generator")
    }

    /// Generator indices predicted by a network, in order (all but the slack).
    pub fn non_slack_gens(&self) -> Vec<usize> {
        let s = self.slack_gen();
        (0..self.n_gens()).filter(|&g| g != s).collect()
    }

    pub fn nominal_loads(&self) -> Vec<f64> {
        self.loads.iter().map(|l| l.p_nominal).collect()
    }

    pub fn gen_map(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_buses(), self.n_gens());
        for (g, gen) in self.gens.iter().enumerate() {
            m[(gen.bus, g)] = 1.0;
        }
        m
    }

    pub fn load_map(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_buses(), self.n_loads());
        for (d, load) in self.loads.iter().enumerate() {
            m[(load.bus, d)] = 1.0;
        }
        m
    }

    /// Net injection per bus (`M_g p_g - M_d p_d`) in MW.
    pub fn bus_injections(&self, dispatch: &[f64], loads: &[f64]) -> Vec<f64> {
        let mut inj = vec![0.0; self.n_buses()];
        for (g, p) in self.gens.iter().zip(dispatch) {
            inj[g.bus] += p;
        }
        for (l, p) in self.loads.iter().zip(loads) {
            inj[l.bus] -= p;
        }
        inj
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.n_buses();
        if n == 0 {
            return Err(GridError::Invalid("case has no buses"));
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(GridError::Invalid("base_mva must be positive"));
        }
        let check = |what, index, bus: usize| {
            if bus >= n {
                Err(GridError::BadBus {
                    what,
                    index,
                    bus,
                    n_buses: n,
                })
            } else {
                Ok(())
            }
        };
        check("slack", 0, self.slack_bus)?;
        for (i, l) in self.lines.iter().enumerate() {
            check("line", i, l.from)?;
            check("line", i, l.to)?;
            if l.from == l.to {
                return Err(GridError::Invalid("line connects a bus to itself"));
            }
            if !(l.flow_limit > 0.0) {
                return Err(GridError::BadFlowLimit(i));
            }
            if !l.susceptance.is_finite() || l.susceptance == 0.0 {
                return Err(GridError::BadSusceptance(i));
            }
        }
        if self.gens.is_empty() {
            return Err(GridError::Invalid("case has no generators"));
        }
        for (i, g) in self.gens.iter().enumerate() {
            check("generator", i, g.bus)?;
            if !(g.p_min.is_finite() && g.p_max.is_finite() && g.cost.is_finite()) {
                return Err(GridError::Invalid("generator data must be finite"));
            }
            if g.p_min > g.p_max {
                return Err(GridError::InvertedLimits(i));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            check("load", i, l.bus)?;
            if !(l.p_nominal.is_finite() && l.p_nominal >= 0.0) {
                return Err(GridError::Invalid("load demand must be finite and non-negative"));
            }
        }
        if !self.gens.iter().any(|g| g.bus == self.slack_bus) {
            return Err(GridError::NoSlackGenerator(self.slack_bus));
        }
        // Breadth-first search from the slack bus.
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut seen = vec![false; n];
        let mut queue = vec![self.slack_bus];
        seen[self.slack_bus] = true;
        while let Some(b) = queue.pop() {
            for &nb in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push(nb);
                }
            }
        }
        if let Some(b) = seen.iter().position(|s| !s) {
            return Err(GridError::Disconnected(b));
        }
        Ok(())
    }
}

/// Bus and line admittance matrices and the PTDF of a case.
#[derive(Debug, Clone)]
pub struct AdmittanceSet {
    /// `n_buses x n_buses`, p.u.
    pub b_bus: Matrix,
    /// `n_lines x n_buses`, p.u.; flow = `b_line * theta`.
    pub b_line: Matrix,
    /// `n_lines x (n_buses - 1)`; columns follow `non_slack`.
    pub ptdf: Matrix,
    /// Non-slack bus indices in column order of `ptdf`.
    pub non_slack: Vec<usize>,
    pub slack_bus: usize,
    pub base_mva: f64,
    reduced: Lu,
}

impl AdmittanceSet {
    pub fn build(case: &GridCase) -> Result<Self, GridError> {
        let n = case.n_buses();
        let nl = case.n_lines();
        let mut b_bus = Matrix::zeros(n, n);
        let mut b_line = Matrix::zeros(nl, n);
        for (i, l) in case.lines.iter().enumerate() {
            let b = l.susceptance;
            b_bus[(l.from, l.from)] += b;
            b_bus[(l.to, l.to)] += b;
            b_bus[(l.from, l.to)] -= b;
            b_bus[(l.to, l.from)] -= b;
            b_line[(i, l.from)] = b;
            b_line[(i, l.to)] = -b;
        }
        let non_slack: Vec<usize> = (0..n).filter(|&b| b != case.slack_bus).collect();
        let m = non_slack.len();
        let mut reduced = Matrix::zeros(m, m);
        for (r, &bi) in non_slack.iter().enumerate() {
            for (c, &bj) in non_slack.iter().enumerate() {
                reduced[(r, c)] = b_bus[(bi, bj)];
            }
        }
        let lu = Lu::factorize(&reduced).map_err(|_| GridError::Singular)?;
        // ptdf = B_line,r * B_r^-1, computed row by row as B_r^-T b_line_r.
        let mut ptdf = Matrix::zeros(nl, m);
        for i in 0..nl {
            let rhs: Vec<f64> = non_slack.iter().map(|&b| b_line[(i, b)]).collect();
            let row = lu.solve_transposed(&rhs);
            ptdf.row_mut(i).copy_from_slice(&row);
        }
        Ok(Self {
            b_bus,
            b_line,
            ptdf,
            non_slack,
            slack_bus: case.slack_bus,
            base_mva: case.base_mva,
            reduced: lu,
        })
    }

    /// Line flows in MW for net injections (MW) at the non-slack buses.
    /// The injections need not balance; the slack absorbs the residual.
    pub fn line_flows(&self, injections: &[f64]) -> Result<Vec<f64>, GridError> {
        if injections.len() != self.non_slack.len() {
            return Err(GridError::Dimension {
                expected: self.non_slack.len(),
                got: injections.len(),
            });
        }
        Ok(self.ptdf.mul_vec(injections))
    }

    /// Line flows for injections given at every bus; the slack entry is ignored.
    pub fn line_flows_all_buses(&self, injections: &[f64]) -> Result<Vec<f64>, GridError> {
        if injections.len() != self.non_slack.len() + 1 {
            return Err(GridError::Dimension {
                expected: self.non_slack.len() + 1,
                got: injections.len(),
            });
        }
        let reduced: Vec<f64> = self.non_slack.iter().map(|&b| injections[b]).collect();
        self.line_flows(&reduced)
    }

    /// Bus angles in rad for non-slack injections in MW (slack angle 0).
    pub fn angles(&self, injections: &[f64]) -> Result<Vec<f64>, GridError> {
        if injections.len() != self.non_slack.len() {
            return Err(GridError::Dimension {
                expected: self.non_slack.len(),
                got: injections.len(),
            });
        }
        let pu: Vec<f64> = injections.iter().map(|p| p / self.base_mva).collect();
        let th = self.reduced.solve(&pu);
        let mut theta = vec![0.0; self.non_slack.len() + 1];
        for (k, &b) in self.non_slack.iter().enumerate() {
            theta[b] = th[k];
        }
        Ok(theta)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn bus_list(n: usize) -> Vec<Bus> {
        (1..=n)
            .map(|i| Bus {
                label: format!("{i}"),
            })
            .collect()
    }

    pub(crate) fn two_bus() -> GridCase {
        GridCase {
            name: "two-bus".to_string(),
            buses: bus_list(2),
            lines: vec![Line {
                from: 0,
                to: 1,
                susceptance: 10.0,
                flow_limit: 80.0,
            }],
            gens: vec![Generator {
                bus: 0,
                p_min: 0.0,
                p_max: 200.0,
                cost: 10.0,
            }],
            loads: vec![Load {
                bus: 1,
                p_nominal: 100.0,
            }],
            slack_bus: 0,
            base_mva: 100.0,
        }
    }

    pub(crate) fn ring3() -> GridCase {
        let line = |from, to| Line {
            from,
            to,
            susceptance: 5.0,
            flow_limit: 100.0,
        };
        GridCase {
            name: "ring3".to_string(),
            buses: bus_list(3),
            lines: vec![line(0, 1), line(1, 2), line(0, 2)],
            gens: vec![
                Generator {
                    bus: 0,
                    p_min: 0.0,
                    p_max: 200.0,
                    cost: 20.0,
                },
                Generator {
                    bus: 1,
                    p_min: 0.0,
                    p_max: 150.0,
                    cost: 10.0,
                },
            ],
            loads: vec![Load {
                bus: 2,
                p_nominal: 120.0,
            }],
            slack_bus: 0,
            base_mva: 100.0,
        }
    }

    #[test]
    fn two_bus_ptdf_is_minus_one() {
        let adm = AdmittanceSet::build(&two_bus()).unwrap();
        assert_eq!(adm.ptdf.rows(), 1);
        assert!((adm.ptdf[(0, 0)] + 1.0).abs() < 1e-15);
        let f = adm.line_flows(&[-50.0]).unwrap();
        assert!((f[0] - 50.0).abs() < 1e-12);
        assert_eq!(adm.line_flows(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn ring_splits_two_thirds_one_third() {
        let case = ring3();
        let adm = AdmittanceSet::build(&case).unwrap();
        // 1 MW injected at bus 2 (index 1) leaves via the slack.
        let f = adm.line_flows(&[1.0, 0.0]).unwrap();
        // Direct path 1-0 carries 2/3 toward the slack: line (0,1) flow is -2/3.
        assert!((f[0] + 2.0 / 3.0).abs() < 1e-12);
        assert!((f[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((f[2] + 1.0 / 3.0).abs() < 1e-12);
        // Oracle: solve the angles directly and apply b_line.
        let theta = adm.angles(&[1.0, 0.0]).unwrap();
        let direct = adm.b_line.mul_vec(&theta);
        for (a, b) in f.iter().zip(&direct) {
            assert!((a - b * case.base_mva).abs() < 1e-12);
        }
    }

    #[test]
    fn bus_matrix_is_a_laplacian() {
        let adm = AdmittanceSet::build(&ring3()).unwrap();
        for i in 0..3 {
            let s: f64 = adm.b_bus.row(i).iter().sum();
            assert_eq!(s, 0.0);
            for j in 0..3 {
                assert_eq!(adm.b_bus[(i, j)], adm.b_bus[(j, i)]);
            }
        }
    }

    #[test]
    fn validation_catches_bad_cases() {
        let mut c = two_bus();
        c.gens[0].bus = 7;
        assert!(matches!(c.validate(), Err(GridError::BadBus { .. })));
        let mut c = two_bus();
        c.lines.clear();
        assert_eq!(c.validate(), Err(GridError::Disconnected(1)));
        let mut c = two_bus();
        c.slack_bus = 1;
        assert_eq!(c.validate(), Err(GridError::NoSlackGenerator(1)));
        let mut c = two_bus();
        c.gens[0].p_min = 300.0;
        assert_eq!(c.validate(), Err(GridError::InvertedLimits(0)));
        assert!(two_bus().validate().is_ok());
    }

    #[test]
    fn incidence_maps_have_one_entry_per_column() {
        let c = ring3();
        for m in [c.gen_map(), c.load_map()] {
            for j in 0..m.cols() {
                let col = m.column(j);
                assert_eq!(col.iter().filter(|v| **v != 0.0).count(), 1);
                assert_eq!(col.iter().sum::<f64>(), 1.0);
            }
        }
    }

    fn random_connected_case(seed: u64, n: usize) -> GridCase {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut lines = Vec::new();
        // Spanning tree plus a few chords.
        for b in 1..n {
            let to = rng.random_range(0..b);
            lines.push(Line {
                from: b,
                to,
                susceptance: rng.random_range(2.0..20.0),
                flow_limit: 100.0,
            });
        }
        for _ in 0..n / 2 {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                lines.push(Line {
                    from: a,
                    to: b,
                    susceptance: rng.random_range(2.0..20.0),
                    flow_limit: 100.0,
                });
            }
        }
        GridCase {
            name: "random".to_string(),
            buses: bus_list(n),
            lines,
            gens: vec![Generator {
                bus: 0,
                p_min: 0.0,
                p_max: 100.0,
                cost: 1.0,
            }],
            loads: vec![],
            slack_bus: 0,
            base_mva: 100.0,
        }
    }

    proptest! {
        #[test]
        fn prop_ptdf_matches_angle_solve(seed in any::<u64>(), n in 2usize..9) {
            let case = random_connected_case(seed, n);
            let adm = AdmittanceSet::build(&case).unwrap();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 1);
            let inj: Vec<f64> = (0..n - 1).map(|_| rand::Rng::random_range(&mut rng, -50.0..50.0)).collect();
            let flows = adm.line_flows(&inj).unwrap();
            let theta = adm.angles(&inj).unwrap();
            let direct = adm.b_line.mul_vec(&theta);
            for (a, b) in flows.iter().zip(&direct) {
                let b = b * case.base_mva;
                prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
            }
            // Adding an injection at the slack bus changes nothing.
            let mut all = vec![0.0; n];
            for (k, &b) in adm.non_slack.iter().enumerate() {
                all[b] = inj[k];
            }
            all[case.slack_bus] = 123.0;
            prop_assert_eq!(adm.line_flows_all_buses(&all).unwrap(), flows);
        }
    }
}
