use alloc::string::String;
use core::fmt::Write;

use super::{LinearModel, Relation, Sense, VarKind};

/// Writes `model` in CPLEX LP text format. Variables are named `x{i}` and
/// rows `c{i}`, so the output is byte-for-byte reproducible.
pub fn export_lp_format(model: &LinearModel) -> String {
    let mut out = String::new();
    let _ = write_lp(model, &mut out);
    out
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (usize, f64)>) -> core::fmt::Result {
    let mut first = true;
    for (j, c) in terms {
        if c == 0.0 {
            continue;
        }
        if first {
            if c < 0.0 {
                write!(out, " - {} x{}", -c, j)?;
            } else {
                write!(out, " {} x{}", c, j)?;
            }
            first = false;
        } else if c < 0.0 {
            write!(out, " - {} x{}", -c, j)?;
        } else {
            write!(out, " + {} x{}", c, j)?;
        }
    }
    if first {
        write!(out, " 0 x0")?;
    }
    Ok(())
}

fn write_lp(model: &LinearModel, out: &mut String) -> core::fmt::Result {
    let n = model.num_vars();
    match model.sense() {
        Sense::Minimize => writeln!(out, "Minimize")?,
        Sense::Maximize => writeln!(out, "Maximize")?,
    }
    write!(out, " obj:")?;
    if n > 0 {
        write_terms(out, model.objective().iter().copied().enumerate())?;
    }
    let k = model.objective_constant();
    if k != 0.0 {
        if k < 0.0 {
            write!(out, " - {}", -k)?;
        } else {
            write!(out, " + {}", k)?;
        }
    }
    writeln!(out)?;
    if n == 0 && model.num_constraints() == 0 {
        writeln!(out, "End")?;
        return Ok(());
    }
    if model.num_constraints() > 0 {
        writeln!(out, "Subject To")?;
        for (i, c) in model.constraints().iter().enumerate() {
            write!(out, " c{}:", i)?;
            write_terms(out, c.terms.iter().map(|(v, a)| (v.0, *a)))?;
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            writeln!(out, " {} {}", rel, c.rhs)?;
        }
    }
    let mut bounds = String::new();
    for j in 0..n {
        let (lo, hi) = (model.lower()[j], model.upper()[j]);
        let binary = model.kinds()[j] == VarKind::Binary;
        if binary && lo == 0.0 && hi == 1.0 {
            continue;
        }
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => writeln!(bounds, " x{} free", j)?,
            (true, true) if lo == hi => writeln!(bounds, " x{} = {}", j, lo)?,
            (true, true) => writeln!(bounds, " {} <= x{} <= {}", lo, j, hi)?,
            (true, false) if lo == 0.0 => {}
            (true, false) => writeln!(bounds, " x{} >= {}", j, lo)?,
            (false, true) => writeln!(bounds, " -inf <= x{} <= {}", j, hi)?,
        }
    }
    if !bounds.is_empty() {
        writeln!(out, "Bounds")?;
        out.push_str(&bounds);
    }
    let bins: alloc::vec::Vec<usize> = (0..n).filter(|&j| model.kinds()[j] == VarKind::Binary).collect();
    if !bins.is_empty() {
        writeln!(out, "Binaries")?;
        for chunk in bins.chunks(10) {
            for j in chunk {
                write!(out, " x{}", j)?;
            }
            writeln!(out)?;
        }
    }
    writeln!(out, "End")?;
    Ok(())
}
