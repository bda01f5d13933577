use nnopf_core::dataset::{lhs_sample, InputDomain};
use nnopf_core::dcopf::{kkt_residuals, solve_dcopf};
use nnopf_core::encode::{encode_network, interval_bounds, StabilityMode};
use nnopf_core::grid::{AdmittanceSet, Bus, Generator, GridCase, Line, Load};
use nnopf_core::lp::{solve_milp, LinExpr, NoClock, Sense, SolverParams, Status};
use nnopf_core::mlp::{complete_dispatch, MlpNetwork, Scaler};
use proptest::prelude::*;

/// Three buses in a ring, cheap generation at bus 1, expensive at bus 2,
/// loads at buses 2 and 3.
fn ring3(limit: f64) -> GridCase {
    let line = |from, to| Line {
        from,
        to,
        susceptance: 10.0,
        flow_limit: limit,
    };
    GridCase {
        name: "ring3".into(),
        buses: (1..=3).map(|i| Bus { label: i.to_string() }).collect(),
        lines: vec![line(0, 1), line(1, 2), line(0, 2)],
        gens: vec![
            Generator {
                bus: 0,
                p_min: 0.0,
                p_max: 250.0,
                cost: 10.0,
            },
            Generator {
                bus: 1,
                p_min: 10.0,
                p_max: 200.0,
                cost: 30.0,
            },
        ],
        loads: vec![
            Load {
                bus: 1,
                p_nominal: 90.0,
            },
            Load {
                bus: 2,
                p_nominal: 110.0,
            },
        ],
        slack_bus: 0,
        base_mva: 100.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lhs_puts_one_sample_in_every_stratum(n in 1usize..60, seed in any::<u64>()) {
        let case = ring3(f64::INFINITY);
        let d = InputDomain::uniform_box(&case, 0.6, 1.0);
        let s = lhs_sample(&d, n, seed).unwrap();
        let (lo, hi) = (d.lo_mw(), d.hi_mw());
        for k in 0..d.dim() {
            let mut seen = vec![false; n];
            for i in 0..n {
                let v = s.row(i)[k];
                prop_assert!(v >= lo[k] && v <= hi[k]);
                let stratum = (((v - lo[k]) / (hi[k] - lo[k])) * n as f64).floor() as usize;
                seen[stratum.min(n - 1)] = true;
            }
            prop_assert!(seen.iter().all(|x| *x));
        }
    }

    #[test]
    fn dcopf_solutions_satisfy_kkt(a in 0.0f64..1.0, b in 0.0f64..1.0, limit in 40.0f64..200.0) {
        let case = ring3(limit);
        let adm = AdmittanceSet::build(&case).unwrap();
        let load = [90.0 * (0.6 + 0.4 * a), 110.0 * (0.6 + 0.4 * b)];
        if let Ok(s) = solve_dcopf(&case, &adm, &load) {
            prop_assert!(kkt_residuals(&case, &adm, &load, &s).max() <= 1e-6);
            let total: f64 = s.p_g.iter().sum();
            prop_assert!((total - load.iter().sum::<f64>()).abs() <= 1e-6);
        }
    }

    #[test]
    fn completed_dispatch_balances_the_load(p in -50.0f64..300.0, a in 0.0f64..200.0, b in 0.0f64..200.0) {
        let case = ring3(f64::INFINITY);
        let d = complete_dispatch(&case, &[p], &[a, b]);
        prop_assert!((d.iter().sum::<f64>() - a - b).abs() <= 1e-9);
        prop_assert_eq!(d[1], p);
    }

    #[test]
    fn scaler_round_trips(min in -100.0f64..100.0, range in 0.1f64..100.0, x in -1e3f64..1e3) {
        let s = Scaler { min: vec![min], range: vec![range] };
        let back = s.denormalize(&s.normalize(&[x]));
        prop_assert!((back[0] - x).abs() <= 1e-9 * (1.0 + x.abs()));
    }

    #[test]
    fn linexpr_eval_is_linear(c in -5.0f64..5.0, k in -5.0f64..5.0, x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let mut m = nnopf_core::lp::LinearModel::new();
        let (u, v) = (m.add_free_var(), m.add_free_var());
        let mut e = LinExpr::constant(c);
        e.add_term(u, k).add_term(v, 2.0);
        let s = e.scaled(3.0);
        prop_assert!((s.eval(&[x, y]) - 3.0 * (c + k * x + 2.0 * y)).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn interval_bounds_contain_pre_activations(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let case = ring3(f64::INFINITY);
        let net = MlpNetwork::random(&[2, 6, 6, 1], seed);
        let d = InputDomain::uniform_box(&case, 0.6, 1.0);
        let bounds = interval_bounds(&net, &d).unwrap();
        let load = [90.0 * (0.6 + 0.4 * a), 110.0 * (0.6 + 0.4 * b)];
        for (layer, z) in net.pre_activations(&load).iter().enumerate() {
            for (j, v) in z.iter().enumerate() {
                let nb = &bounds.layers[layer][j];
                prop_assert!(nb.lo <= *v && *v <= nb.hi);
            }
        }
    }

    #[test]
    fn encoding_reproduces_the_forward_pass(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let case = ring3(f64::INFINITY);
        let net = MlpNetwork::random(&[2, 5, 5, 1], seed);
        let d = InputDomain::uniform_box(&case, 0.6, 1.0);
        let bounds = interval_bounds(&net, &d).unwrap();
        let enc = encode_network(&net, &case, &d, &bounds, StabilityMode::Certified, None).unwrap();
        let load = [90.0 * (0.6 + 0.4 * a), 110.0 * (0.6 + 0.4 * b)];
        let mut m = enc.model.clone();
        for (v, p) in enc.p_d.iter().zip(&load) {
            m.fix(*v, *p);
        }
        m.set_objective(Sense::Minimize, LinExpr::new());
        let r = solve_milp(&m, &SolverParams::default(), &NoClock).unwrap();
        prop_assert_eq!(r.status, Status::Optimal);
        let want = complete_dispatch(&case, &net.forward(&load), &load);
        for (v, w) in enc.p_hat.iter().zip(&want) {
            prop_assert!((r.x[v.0] - w).abs() <= 1e-6, "{} vs {}", r.x[v.0], w);
        }
    }
}
