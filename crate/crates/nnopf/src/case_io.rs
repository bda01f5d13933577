//! Grid case files: the native JSON format and a read-only subset of
//! MATPOWER `.m` cases.

use std::collections::HashMap;
use std::path::Path;

use nnopf_core::grid::{Bus, Generator, GridCase, GridError, Line, Load};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid case JSON")]
    Json(#[from] serde_json::Error),
    #[error("missing table mpc.{0}")]
    MissingTable(&'static str),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    Json,
    Matpower,
}

impl CaseFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "json" => Some(CaseFormat::Json),
            "m" => Some(CaseFormat::Matpower),
            _ => None,
        }
    }
}

/// A validated case together with everything the reader chose to ignore.
#[derive(Debug, Clone)]
pub struct ParsedCase {
    pub case: GridCase,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    name: String,
    base_mva: f64,
    /// Index into `buses`.
    slack_bus: usize,
    buses: Vec<BusEntry>,
    lines: Vec<LineEntry>,
    generators: Vec<GenEntry>,
    loads: Vec<LoadEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusEntry {
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineEntry {
    from: usize,
    to: usize,
    susceptance: f64,
    /// MW; `null` for an unconstrained line.
    flow_limit: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenEntry {
    bus: usize,
    p_min: f64,
    p_max: f64,
    cost: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadEntry {
    bus: usize,
    p_nominal: f64,
}

impl From<&GridCase> for CaseFile {
    fn from(c: &GridCase) -> Self {
        CaseFile {
            name: c.name.clone(),
            base_mva: c.base_mva,
            slack_bus: c.slack_bus,
            buses: c
                .buses
                .iter()
                .map(|b| BusEntry {
                    label: b.label.clone(),
                })
                .collect(),
            lines: c
                .lines
                .iter()
                .map(|l| LineEntry {
                    from: l.from,
                    to: l.to,
                    susceptance: l.susceptance,
                    flow_limit: l.flow_limit.is_finite().then_some(l.flow_limit),
                })
                .collect(),
            generators: c
                .gens
                .iter()
                .map(|g| GenEntry {
                    bus: g.bus,
                    p_min: g.p_min,
                    p_max: g.p_max,
                    cost: g.cost,
                })
                .collect(),
            loads: c
                .loads
                .iter()
                .map(|l| LoadEntry {
                    bus: l.bus,
                    p_nominal: l.p_nominal,
                })
                .collect(),
        }
    }
}

impl From<CaseFile> for GridCase {
    fn from(f: CaseFile) -> Self {
        GridCase {
            name: f.name,
            base_mva: f.base_mva,
            slack_bus: f.slack_bus,
            buses: f.buses.into_iter().map(|b| Bus { label: b.label }).collect(),
            lines: f
                .lines
                .into_iter()
                .map(|l| Line {
                    from: l.from,
                    to: l.to,
                    susceptance: l.susceptance,
                    flow_limit: l.flow_limit.unwrap_or(f64::INFINITY),
                })
                .collect(),
            gens: f
                .generators
                .into_iter()
                .map(|g| Generator {
                    bus: g.bus,
                    p_min: g.p_min,
                    p_max: g.p_max,
                    cost: g.cost,
                })
                .collect(),
            loads: f
                .loads
                .into_iter()
                .map(|l| Load {
                    bus: l.bus,
                    p_nominal: l.p_nominal,
                })
                .collect(),
        }
    }
}

/// Native JSON text of a case.
pub fn case_to_json(case: &GridCase) -> String {
    let mut s = serde_json::to_string_pretty(&CaseFile::from(case)).expect("case serializes");
    s.push('\n');
    s
}

pub fn parse_case(text: &str, format: CaseFormat) -> Result<ParsedCase, CaseError> {
    let parsed = match format {
        CaseFormat::Json => ParsedCase {
            case: serde_json::from_str::<CaseFile>(text)?.into(),
            warnings: Vec::new(),
        },
        CaseFormat::Matpower => parse_matpower(text)?,
    };
    parsed.case.validate()?;
    Ok(parsed)
}

/// Reads a case, picking the format from the extension (or the first
/// non-blank character when there is none).
pub fn load_case(path: &Path) -> Result<ParsedCase, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let format = CaseFormat::from_path(path).unwrap_or_else(|| {
        if text.trim_start().starts_with('{') {
            CaseFormat::Json
        } else {
            CaseFormat::Matpower
        }
    });
    let parsed = parse_case(&text, format)?;
    for w in &parsed.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(parsed)
}

struct Table {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_row(tokens: &str, line: usize) -> Result<Vec<f64>, CaseError> {
    tokens
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v = match t {
                "Inf" | "inf" => Ok(f64::INFINITY),
                "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
                _ => t.parse::<f64>(),
            };
            v.map_err(|_| CaseError::Parse {
                line,
                msg: format!("expected a number, found `{t}`"),
            })
        })
        .collect()
}

/// Case name, `mpc.<name>` scalars with their line numbers, numeric tables.
type Scanned = (String, HashMap<String, (usize, String)>, HashMap<String, Table>);

/// Splits the text into `mpc.<name>` scalar assignments and numeric tables.
fn scan(text: &str) -> Result<Scanned, CaseError> {
    let mut name = String::from("case");
    let mut scalars = HashMap::new();
    let mut tables: HashMap<String, Table> = HashMap::new();
    let mut open: Option<(String, Table, char)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut rest = strip_comment(raw).trim();
        if let Some((key, table, close)) = open.as_mut() {
            let (body, done) = match rest.find(*close) {
                Some(p) => (&rest[..p], true),
                None => (rest, false),
            };
            if *close == ']' {
                for chunk in body.split(';') {
                    let row = parse_row(chunk, line)?;
                    if !row.is_empty() {
                        table.rows.push((line, row));
                    }
                }
            }
            if done {
                let (key, table, close) = open.take().expect("open table");
                if close == ']' {
                    tables.insert(key, table);
                }
            } else {
                let _ = key;
            }
            continue;
        }
        if rest.is_empty() {
            continue;
        }
        if let Some(f) = rest.strip_prefix("function") {
            if let Some((_, n)) = f.split_once('=') {
                name = n.trim().trim_end_matches(';').trim().to_string();
            }
            continue;
        }
        let Some(assign) = rest.strip_prefix("mpc.") else {
            return Err(CaseError::Parse {
                line,
                msg: format!("unexpected statement `{rest}`"),
            });
        };
        let Some((key, value)) = assign.split_once('=') else {
            return Err(CaseError::Parse {
                line,
                msg: "expected `mpc.<field> = ...`".into(),
            });
        };
        let key = key.trim().to_string();
        rest = value.trim();
        let (opener, close) = match rest.chars().next() {
            Some('[') => ('[', ']'),
            Some('{') => ('{', '}'),
            _ => {
                scalars.insert(key, (line, rest.trim_end_matches(';').trim().to_string()));
                continue;
            }
        };
        let body = &rest[opener.len_utf8()..];
        let mut table = Table {
            line,
            rows: Vec::new(),
        };
        match body.find(close) {
            Some(p) => {
                if close == ']' {
                    for chunk in body[..p].split(';') {
                        let row = parse_row(chunk, line)?;
                        if !row.is_empty() {
                            table.rows.push((line, row));
                        }
                    }
                    tables.insert(key, table);
                }
            }
            None => {
                if close == ']' {
                    for chunk in body.split(';') {
                        let row = parse_row(chunk, line)?;
                        if !row.is_empty() {
                            table.rows.push((line, row));
                        }
                    }
                }
                open = Some((key, table, close));
            }
        }
    }
    if let Some((key, table, _)) = open {
        return Err(CaseError::Parse {
            line: table.line,
            msg: format!("mpc.{key} is never closed"),
        });
    }
    Ok((name, scalars, tables))
}

fn take_table(
    tables: &mut HashMap<String, Table>,
    key: &'static str,
    min_cols: usize,
) -> Result<Table, CaseError> {
    let t = tables.remove(key).ok_or(CaseError::MissingTable(key))?;
    let width = t.rows.first().map_or(min_cols, |r| r.1.len());
    for (line, row) in &t.rows {
        if row.len() != width {
            return Err(CaseError::Parse {
                line: *line,
                msg: format!("mpc.{key} row has {} columns, expected {width}", row.len()),
            });
        }
        if row.len() < min_cols {
            return Err(CaseError::Parse {
                line: *line,
                msg: format!("mpc.{key} needs at least {min_cols} columns"),
            });
        }
    }
    Ok(t)
}

/// Warns once per table about columns that carry data the model ignores.
fn ignored_columns(key: &str, t: &Table, names: &[(usize, &str)], warnings: &mut Vec<String>) {
    let used: Vec<&str> = names
        .iter()
        .filter(|(c, _)| t.rows.iter().any(|(_, r)| r.get(*c).is_some_and(|v| *v != 0.0)))
        .map(|(_, n)| *n)
        .collect();
    if !used.is_empty() {
        warnings.push(format!("mpc.{key}: ignoring {}", used.join(", ")));
    }
}

fn parse_matpower(text: &str) -> Result<ParsedCase, CaseError> {
    let (name, scalars, mut tables) = scan(text)?;
    let mut warnings = Vec::new();
    let base_mva = match scalars.get("baseMVA") {
        Some((line, v)) => v.parse::<f64>().map_err(|_| CaseError::Parse {
            line: *line,
            msg: format!("baseMVA must be a number, found `{v}`"),
        })?,
        None => return Err(CaseError::MissingTable("baseMVA")),
    };
    let bus = take_table(&mut tables, "bus", 3)?;
    let gen = take_table(&mut tables, "gen", 10)?;
    let branch = take_table(&mut tables, "branch", 11)?;
    let gencost = take_table(&mut tables, "gencost", 4)?;
    for key in tables.keys() {
        warnings.push(format!("mpc.{key}: table ignored"));
    }
    for key in scalars.keys().filter(|k| *k != "baseMVA" && *k != "version") {
        warnings.push(format!("mpc.{key}: field ignored"));
    }
    ignored_columns("bus", &bus, &[(3, "QD"), (4, "GS"), (5, "BS")], &mut warnings);
    ignored_columns("gen", &gen, &[(2, "QG"), (3, "QMAX"), (4, "QMIN")], &mut warnings);
    ignored_columns(
        "branch",
        &branch,
        &[(2, "BR_R"), (4, "BR_B"), (8, "TAP"), (9, "SHIFT")],
        &mut warnings,
    );

    let mut index = HashMap::new();
    let mut buses = Vec::new();
    let mut loads = Vec::new();
    let mut slack = None;
    for (line, row) in &bus.rows {
        let id = row[0];
        if row[1] == 4.0 {
            warnings.push(format!("bus {id} is isolated and dropped"));
            continue;
        }
        let k = buses.len();
        if index.insert(id.to_bits(), k).is_some() {
            return Err(CaseError::Parse {
                line: *line,
                msg: format!("duplicate bus {id}"),
            });
        }
        buses.push(Bus { label: fmt_id(id) });
        if row[1] == 3.0 {
            if slack.is_some() {
                return Err(CaseError::Unsupported("more than one reference bus".into()));
            }
            slack = Some(k);
        }
        if row[2] < 0.0 {
            return Err(CaseError::Unsupported(format!("negative demand at bus {id}")));
        }
        if row[2] > 0.0 {
            loads.push(Load {
                bus: k,
                p_nominal: row[2],
            });
        }
    }
    let slack_bus = slack.ok_or_else(|| CaseError::Unsupported("no reference bus (type 3)".into()))?;
    let lookup = |id: f64, line: usize, what: &str| -> Result<Option<usize>, CaseError> {
        match index.get(&id.to_bits()) {
            Some(k) => Ok(Some(*k)),
            None if bus.rows.iter().any(|(_, r)| r[0] == id) => Ok(None),
            None => Err(CaseError::Parse {
                line,
                msg: format!("{what} refers to unknown bus {id}"),
            }),
        }
    };

    if gencost.rows.len() < gen.rows.len() {
        return Err(CaseError::Parse {
            line: gencost.line,
            msg: format!(
                "mpc.gencost has {} rows for {} generators",
                gencost.rows.len(),
                gen.rows.len()
            ),
        });
    }
    if gencost.rows.len() > gen.rows.len() {
        warnings.push("mpc.gencost: reactive power cost rows ignored".into());
    }
    let mut gens = Vec::new();
    for (g, ((line, row), (cline, cost))) in gen.rows.iter().zip(&gencost.rows).enumerate() {
        let Some(b) = lookup(row[0], *line, "generator")? else {
            warnings.push(format!(
                "generator {} sits on an isolated bus and is dropped",
                g + 1
            ));
            continue;
        };
        if row[7] <= 0.0 {
            warnings.push(format!("generator {} is out of service and dropped", g + 1));
            continue;
        }
        gens.push(Generator {
            bus: b,
            p_min: row[9],
            p_max: row[8],
            cost: linear_cost(cost, *cline, g)?,
        });
    }

    let mut lines = Vec::new();
    for (i, (line, row)) in branch.rows.iter().enumerate() {
        let (Some(f), Some(t)) = (lookup(row[0], *line, "branch")?, lookup(row[1], *line, "branch")?) else {
            warnings.push(format!("branch {} touches an isolated bus and is dropped", i + 1));
            continue;
        };
        if row[10] <= 0.0 {
            warnings.push(format!("branch {} is out of service and dropped", i + 1));
            continue;
        }
        if row[3] == 0.0 {
            warnings.push(format!("branch {} has zero reactance and is dropped", i + 1));
            continue;
        }
        let rate = row[5];
        lines.push(Line {
            from: f,
            to: t,
            susceptance: 1.0 / row[3],
            flow_limit: if rate > 0.0 { rate } else { f64::INFINITY },
        });
    }

    Ok(ParsedCase {
        case: GridCase {
            name,
            buses,
            lines,
            gens,
            loads,
            slack_bus,
            base_mva,
        },
        warnings,
    })
}

fn fmt_id(id: f64) -> String {
    if id.fract() == 0.0 {
        format!("{}", id as i64)
    } else {
        format!("{id}")
    }
}

/// Linear coefficient of a polynomial cost row `2 startup shutdown n c(n-1) ... c0`.
fn linear_cost(row: &[f64], line: usize, g: usize) -> Result<f64, CaseError> {
    if row[0] != 2.0 {
        return Err(CaseError::Unsupported(format!(
            "generator {}: only polynomial costs (model 2) are supported",
            g + 1
        )));
    }
    let n = row[3] as usize;
    if row[3] != n as f64 || row.len() < 4 + n {
        return Err(CaseError::Parse {
            line,
            msg: format!("gencost row for generator {} has a bad NCOST", g + 1),
        });
    }
    let coeffs = &row[4..4 + n];
    // coefficients are ordered from the highest degree down
    for (k, c) in coeffs.iter().enumerate() {
        let degree = n - 1 - k;
        if degree >= 2 && *c != 0.0 {
            return Err(CaseError::Unsupported(format!(
                "generator {}: nonlinear cost term of degree {degree}",
                g + 1
            )));
        }
    }
    Ok(if n >= 2 { coeffs[n - 2] } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = two
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
\t2\t1\t100\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t0\t0\t1\t100\t1\t200\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t80\t80\t80\t0\t0\t1\t-360\t360;
];
mpc.gencost = [
\t2\t0\t0\t2\t10\t0;
];
";

    #[test]
    fn two_bus_fields_map_directly() {
        let p = parse_case(TWO_BUS, CaseFormat::Matpower).unwrap();
        let c = &p.case;
        assert_eq!(c.name, "two");
        assert_eq!((c.n_buses(), c.n_lines(), c.n_gens(), c.n_loads()), (2, 1, 1, 1));
        assert!((c.lines[0].susceptance - 10.0).abs() < 1e-12);
        assert_eq!(c.lines[0].flow_limit, 80.0);
        assert_eq!(c.gens[0].cost, 10.0);
        assert_eq!(c.loads[0].bus, 1);
        assert!(p.warnings.is_empty(), "{:?}", p.warnings);
    }

    #[test]
    fn unknown_generator_bus_is_rejected_with_its_line() {
        let text = TWO_BUS.replace("\t1\t0\t0\t0\t0\t1", "\t7\t0\t0\t0\t0\t1");
        match parse_case(&text, CaseFormat::Matpower) {
            Err(CaseError::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quadratic_cost_is_unsupported() {
        let text = TWO_BUS.replace("2\t0\t0\t2\t10\t0;", "2\t0\t0\t3\t0.1\t10\t0;");
        assert!(matches!(
            parse_case(&text, CaseFormat::Matpower),
            Err(CaseError::Unsupported(_))
        ));
        let text = TWO_BUS.replace("2\t0\t0\t2\t10\t0;", "2\t0\t0\t3\t0\t10\t0;");
        assert_eq!(
            parse_case(&text, CaseFormat::Matpower).unwrap().case.gens[0].cost,
            10.0
        );
    }

    #[test]
    fn bad_number_reports_line() {
        let text = TWO_BUS.replace("0.1\t0\t80", "0.1\tx\t80");
        match parse_case(&text, CaseFormat::Matpower) {
            Err(CaseError::Parse { line, msg }) => {
                assert_eq!(line, 12);
                assert!(msg.contains('x'));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_service_and_zero_reactance_branches_are_dropped() {
        let text = TWO_BUS.replace("mpc.gencost", "mpc.branch2 = [];\nmpc.gencost");
        let text = text.replace(
            "\t1\t2\t0\t0.1\t0\t80\t80\t80\t0\t0\t1\t-360\t360;",
            "\t1\t2\t0\t0.1\t0\t80\t80\t80\t0\t0\t1\t-360\t360;\n\t1\t2\t0\t0.2\t0\t80\t80\t80\t0\t0\t0\t-360\t360;\n\t1\t2\t0\t0\t0\t80\t80\t80\t0\t0\t1\t-360\t360;",
        );
        let p = parse_case(&text, CaseFormat::Matpower).unwrap();
        assert_eq!(p.case.n_lines(), 1);
        assert_eq!(p.warnings.len(), 3, "{:?}", p.warnings);
    }

    #[test]
    fn unlimited_rating_becomes_infinite_and_round_trips() {
        let text = TWO_BUS.replace("0.1\t0\t80\t80\t80", "0.1\t0\t0\t0\t0");
        let c = parse_case(&text, CaseFormat::Matpower).unwrap().case;
        assert!(c.lines[0].flow_limit.is_infinite());
        let json = case_to_json(&c);
        assert!(json.contains("\"flow_limit\": null"));
        assert_eq!(parse_case(&json, CaseFormat::Json).unwrap().case, c);
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let c = parse_case(TWO_BUS, CaseFormat::Matpower).unwrap().case;
        let json = case_to_json(&c).replacen("\"name\"", "\"colour\": 1, \"name\"", 1);
        assert!(matches!(
            parse_case(&json, CaseFormat::Json),
            Err(CaseError::Json(_))
        ));
    }
}
