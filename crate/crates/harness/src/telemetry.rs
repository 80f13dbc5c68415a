//! Telemetry, timing and substep CSV files.

use std::io::{Read, Write};

use tpc_core::sim::{SubstepSample, TickRecord};
use tpc_core::solver::SolveStatus;

use crate::error::{HarnessError, HarnessResult};

pub const TELEMETRY_HEADER: [&str; 22] = [
    "tick", "time", "p_ref", "q_ref", "p", "q", "i_d", "i_q", "p_meas", "q_meas", "i_d_meas", "i_q_meas", "u_d", "u_q",
    "p_hat", "q_hat", "i_d_hat", "i_q_hat", "status", "iterations", "degraded", "max_current",
];

pub fn status_name(s: Option<SolveStatus>) -> &'static str {
    match s {
        None => "lead_in",
        Some(SolveStatus::Optimal) => "optimal",
        Some(SolveStatus::MaxIter) => "max_iter",
        Some(SolveStatus::Infeasible) => "infeasible",
    }
}

fn parse_status(s: &str) -> HarnessResult<Option<SolveStatus>> {
    Ok(match s {
        "lead_in" => None,
        "optimal" => Some(SolveStatus::Optimal),
        "max_iter" => Some(SolveStatus::MaxIter),
        "infeasible" => Some(SolveStatus::Infeasible),
        other => return Err(HarnessError::Data(format!("unknown solve status '{other}'"))),
    })
}

/// Floats use the shortest representation that parses back to the same bits.
pub fn write_telemetry<W: Write>(w: W, rows: &[TickRecord]) -> HarnessResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TELEMETRY_HEADER)?;
    for r in rows {
        let mut rec: Vec<String> = vec![r.tick.to_string(), r.time.to_string(), r.p_ref.to_string(), r.q_ref.to_string()];
        rec.extend(r.y_clean.iter().map(|v| v.to_string()));
        rec.extend(r.y_meas.iter().map(|v| v.to_string()));
        rec.extend(r.u.iter().map(|v| v.to_string()));
        rec.extend(r.y_hat.iter().map(|v| v.to_string()));
        rec.push(status_name(r.status).into());
        rec.push(r.iterations.to_string());
        rec.push(u8::from(r.degraded).to_string());
        rec.push(r.max_current.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> HarnessResult<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| HarnessError::Data(format!("telemetry line {line}: bad value in column {}", TELEMETRY_HEADER[i])))
}

pub fn read_telemetry<R: Read>(r: R) -> HarnessResult<Vec<TickRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let hdr = rdr.headers()?.clone();
    if hdr.iter().collect::<Vec<_>>() != TELEMETRY_HEADER {
        return Err(HarnessError::Data("telemetry header does not match the expected columns".into()));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let arr4 = |start: usize| -> HarnessResult<[f64; 4]> {
            Ok([num(&rec, start, line)?, num(&rec, start + 1, line)?, num(&rec, start + 2, line)?, num(&rec, start + 3, line)?])
        };
        rows.push(TickRecord {
            tick: num(&rec, 0, line)?,
            time: num(&rec, 1, line)?,
            p_ref: num(&rec, 2, line)?,
            q_ref: num(&rec, 3, line)?,
            y_clean: arr4(4)?,
            y_meas: arr4(8)?,
            u: [num(&rec, 12, line)?, num(&rec, 13, line)?],
            y_hat: arr4(14)?,
            status: parse_status(rec.get(18).unwrap_or(""))?,
            iterations: num(&rec, 19, line)?,
            degraded: num::<u8>(&rec, 20, line)? != 0,
            max_current: num(&rec, 21, line)?,
        });
    }
    Ok(rows)
}

pub fn write_timing<W: Write>(w: W, rows: &[TickRecord], solve_times: &[f64]) -> HarnessResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["tick", "status", "solve_time"])?;
    for (r, t) in rows.iter().zip(solve_times) {
        out.write_record([r.tick.to_string(), status_name(r.status).to_string(), t.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// `(tick, solve_time)` pairs of ticks that ran the solver.
pub fn read_timing<R: Read>(r: R) -> HarnessResult<Vec<(usize, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.get(1) == Some("lead_in") {
            continue;
        }
        let tick = rec.get(0).and_then(|s| s.parse().ok());
        let t = rec.get(2).and_then(|s| s.parse().ok());
        match (tick, t) {
            (Some(tick), Some(t)) => out.push((tick, t)),
            _ => return Err(HarnessError::Data(format!("timing line {}: malformed", k + 2))),
        }
    }
    Ok(out)
}

pub fn write_substeps<W: Write>(w: W, samples: &[SubstepSample]) -> HarnessResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "p", "q", "i_d", "i_q"])?;
    for s in samples {
        let mut rec = vec![s.time.to_string()];
        rec.extend(s.y.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
