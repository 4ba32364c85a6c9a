//! CSV and JSON-lines output for sweeps.

use std::io::Write;

use serde::Serialize;

use crate::engine::SweepAggregate;
use crate::error::Result;

/// Optional baseline columns attached to one row of the sweep table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaselineColumns {
    pub uniform: Option<SweepAggregate>,
    pub bespoke_nmin_total: Option<f64>,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one row per `delta`. Floats carry 17 significant digits so that
/// reruns with the same seeds produce identical bytes.
pub fn write_sweep_csv<W: Write>(
    mut w: W,
    rows: &[SweepAggregate],
    baselines: Option<&[BaselineColumns]>,
) -> Result<()> {
    let with_uniform = baselines.is_some_and(|b| b.iter().any(|c| c.uniform.is_some()));
    let with_bespoke = baselines.is_some_and(|b| b.iter().any(|c| c.bespoke_nmin_total.is_some()));
    let mut header = String::from("delta,mean_tau,std_tau,errors,bound_4U_log,budget_exhausted");
    if with_uniform {
        header.push_str(",uniform_mean_tau,uniform_std_tau,uniform_errors");
    }
    if with_bespoke {
        header.push_str(",bespoke_nmin_total");
    }
    writeln!(w, "{header}")?;
    for (i, r) in rows.iter().enumerate() {
        let mut line = format!(
            "{},{},{},{},{},{}",
            num(r.delta),
            num(r.mean_tau),
            num(r.std_tau),
            r.errors,
            num(r.bound_4u_log),
            r.budget_exhausted
        );
        let extra = baselines.and_then(|b| b.get(i));
        if with_uniform {
            match extra.and_then(|c| c.uniform.as_ref()) {
                Some(u) => line.push_str(&format!(",{},{},{}", num(u.mean_tau), num(u.std_tau), u.errors)),
                None => line.push_str(",,,"),
            }
        }
        if with_bespoke {
            match extra.and_then(|c| c.bespoke_nmin_total) {
                Some(n) => line.push_str(&format!(",{}", num(n))),
                None => line.push(','),
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// One JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
