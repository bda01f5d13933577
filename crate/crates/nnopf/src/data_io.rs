//! Dataset directories: `meta.json`, `inputs.csv`, `targets.csv`, `split.json`.

use std::path::Path;

use anyhow::{bail, Context};
use nnopf_core::dataset::{InputDomain, LabeledDataset, Provenance};
use nnopf_core::grid::GridCase;
use nnopf_core::linalg::Matrix;
use serde::{Deserialize, Serialize};

use crate::fsutil::{fmt_f64, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Serialized [`InputDomain`]; bounds are fractions of `nominal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub nominal: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub polytope: Vec<Halfspace>,
}

impl From<&InputDomain> for DomainEntry {
    fn from(d: &InputDomain) -> Self {
        DomainEntry {
            nominal: d.nominal.clone(),
            lower: d.lower.clone(),
            upper: d.upper.clone(),
            polytope: d
                .polytope
                .iter()
                .map(|(a, b)| Halfspace { a: a.clone(), b: *b })
                .collect(),
        }
    }
}

impl From<DomainEntry> for InputDomain {
    fn from(d: DomainEntry) -> Self {
        InputDomain {
            nominal: d.nominal,
            lower: d.lower,
            upper: d.upper,
            polytope: d.polytope.into_iter().map(|h| (h.a, h.b)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub case_name: String,
    pub seed: u64,
    pub n_requested: usize,
    pub n_infeasible: usize,
    pub n_rows: usize,
    pub domain: DomainEntry,
    pub input_columns: Vec<String>,
    pub target_columns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

pub fn input_columns(case: &GridCase) -> Vec<String> {
    case.loads
        .iter()
        .enumerate()
        .map(|(i, l)| format!("load{i}_bus{}", case.buses[l.bus].label))
        .collect()
}

pub fn target_columns(case: &GridCase) -> Vec<String> {
    case.gens
        .iter()
        .enumerate()
        .map(|(g, x)| format!("gen{g}_bus{}", case.buses[x.bus].label))
        .collect()
}

fn matrix_csv(header: &[String], m: &Matrix) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| fmt_f64(*v)))?;
    }
    Ok(w.into_inner()?)
}

fn read_matrix_csv(path: &Path, cols: &[String]) -> anyhow::Result<Matrix> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != cols {
        bail!("{}: columns {:?} do not match meta.json", path.display(), header);
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for f in rec.iter() {
            data.push(
                f.parse::<f64>()
                    .with_context(|| format!("{}: row {}: bad number `{f}`", path.display(), rows + 1))?,
            );
        }
        rows += 1;
    }
    Ok(Matrix::from_row_major(rows, cols.len(), data))
}

pub fn write_dataset(dir: &Path, case: &GridCase, data: &LabeledDataset) -> anyhow::Result<()> {
    let p = &data.provenance;
    let meta = Meta {
        case_name: p.case_name.clone(),
        seed: p.seed,
        n_requested: p.n_requested,
        n_infeasible: p.n_infeasible,
        n_rows: data.len(),
        domain: (&p.domain).into(),
        input_columns: input_columns(case),
        target_columns: target_columns(case),
    };
    write_atomic(
        &dir.join("inputs.csv"),
        &matrix_csv(&meta.input_columns, &data.inputs)?,
    )?;
    write_atomic(
        &dir.join("targets.csv"),
        &matrix_csv(&meta.target_columns, &data.targets)?,
    )?;
    let split = Split {
        train: data.train.clone(),
        test: data.test.clone(),
    };
    write_atomic(&dir.join("split.json"), serde_json::to_string(&split)?.as_bytes())?;
    write_atomic(
        &dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> anyhow::Result<LabeledDataset> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )
    .with_context(|| format!("parsing {}", meta_path.display()))?;
    let inputs = read_matrix_csv(&dir.join("inputs.csv"), &meta.input_columns)?;
    let targets = read_matrix_csv(&dir.join("targets.csv"), &meta.target_columns)?;
    let split: Split = serde_json::from_str(&std::fs::read_to_string(dir.join("split.json"))?)?;
    if inputs.rows() != meta.n_rows || targets.rows() != meta.n_rows {
        bail!("{}: row counts do not match meta.json", dir.display());
    }
    let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
    all.sort_unstable();
    if all != (0..meta.n_rows).collect::<Vec<_>>() {
        bail!("{}: split.json is not a partition of the rows", dir.display());
    }
    Ok(LabeledDataset {
        inputs,
        targets,
        train: split.train,
        test: split.test,
        provenance: Provenance {
            case_name: meta.case_name,
            seed: meta.seed,
            domain: meta.domain.into(),
            n_requested: meta.n_requested,
            n_infeasible: meta.n_infeasible,
        },
    })
}
