use std::path::Path;

use nnopf::case_io::{case_to_json, load_case, parse_case, CaseFormat};
use nnopf::data_io::{read_dataset, write_dataset};
use nnopf::net_io::{net_from_json, net_to_json};
use nnopf::report_io::{summary_rows, ReportEntry, RunReport};
use nnopf_core::dataset::{generate_dataset, InputDomain};
use nnopf_core::grid::AdmittanceSet;
use nnopf_core::mlp::MlpNetwork;
use proptest::prelude::*;

fn case9_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/case9.m")
}

#[test]
fn case9_matpower_and_json_agree() {
    let m = load_case(&case9_path()).unwrap().case;
    let j = load_case(&case9_path().with_extension("json")).unwrap().case;
    assert_eq!(m, j);
    assert_eq!((m.n_buses(), m.n_lines(), m.n_gens(), m.n_loads()), (9, 9, 3, 3));
    assert_eq!(
        m.gens.iter().map(|g| g.cost).collect::<Vec<_>>(),
        vec![5.0, 1.2, 1.0]
    );
}

#[test]
fn case_json_is_bit_identical_after_a_round_trip() {
    let case = load_case(&case9_path()).unwrap().case;
    let text = case_to_json(&case);
    let again = case_to_json(&parse_case(&text, CaseFormat::Json).unwrap().case);
    assert_eq!(text, again);
}

#[test]
fn dataset_round_trips_through_csv() {
    let case = load_case(&case9_path()).unwrap().case;
    let adm = AdmittanceSet::build(&case).unwrap();
    let data = generate_dataset(&case, &adm, &InputDomain::uniform_box(&case, 0.6, 1.0), 40, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &case, &data).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), data);
}

#[test]
fn corrupted_split_is_rejected() {
    let case = load_case(&case9_path()).unwrap().case;
    let adm = AdmittanceSet::build(&case).unwrap();
    let data = generate_dataset(&case, &adm, &InputDomain::uniform_box(&case, 0.6, 1.0), 10, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &case, &data).unwrap();
    std::fs::write(dir.path().join("split.json"), r#"{"train":[0,0],"test":[1]}"#).unwrap();
    assert!(read_dataset(dir.path()).is_err());
}

#[test]
fn summary_has_a_mean_row_per_metric() {
    let entry = |metric: &str, v: f64| ReportEntry {
        metric: metric.into(),
        unit: "MW".into(),
        worst_case_value: v,
        upper_bound: Some(v),
        raw_value: v,
        exact: true,
        status: "optimal".into(),
        milp_gap: 0.0,
        node_count: 1,
        wall_time: 1.0,
        maximizer_load: vec![],
        maximizer_dispatch: vec![],
        optimal_dispatch: None,
        attaining_index: None,
        boundary_fraction: 0.0,
        strategy: "per_term".into(),
        stability_mode: "certified".into(),
        free_neurons: 0,
        big_m: None,
        empirical_lower_bound: Some(v / 2.0),
        ratio: Some(2.0),
        terms: vec![],
    };
    let run = |seed, v| RunReport {
        case: "c".into(),
        seed,
        network: String::new(),
        bound_stage: "milp".into(),
        stable_neurons: 0,
        hidden_neurons: 0,
        bound_time: 0.0,
        reports: vec![entry("nu_g", v), entry("nu_line", 2.0 * v)],
        failures: vec![],
    };
    let rows = summary_rows(&[run(1, 1.0), run(2, 3.0)]);
    let means: Vec<_> = rows.iter().filter(|r| r.seed == "mean").collect();
    assert_eq!(means.len(), 2);
    assert_eq!(means[0].metric, "nu_g");
    assert_eq!(means[0].guarantee, 2.0);
    assert_eq!(means[1].guarantee, 4.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn networks_round_trip_bit_exactly(seed in any::<u64>(), h1 in 1usize..8, h2 in 1usize..8, prune in 0.0f64..0.9) {
        let mut net = MlpNetwork::random(&[3, h1, h2, 2], seed);
        net.prune_to(prune);
        let back = net_from_json(&net_to_json(&net)).unwrap();
        prop_assert_eq!(&back, &net);
        let bits = |n: &MlpNetwork| n.weights.iter().flat_map(|w| w.as_slice().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&net));
    }
}
