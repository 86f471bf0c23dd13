//! Per-round CSV traces.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::criticality::ExtReal;
use crate::error::{Error, Result};
use crate::protocol::RunTrace;

pub const TRACE_HEADER: &str = "t,eta,region,x,zeta,z_min,alpha,p";

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Formats like C's `%.12g`.
pub fn format_sig12(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    // `{:e}` rounds to the requested digits, so the exponent is already final
    let sci = format!("{:.11e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        let decimals = (11 - exp) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn ext(v: ExtReal) -> String {
    match v {
        ExtReal::Finite(x) => format_sig12(x),
        ExtReal::PosInf => "inf".into(),
    }
}

pub fn write_trace<W: Write>(trace: &RunTrace, mut out: W) -> Result<()> {
    if trace.records.is_empty() {
        return Err(Error::Precondition("trace has no recorded rounds".into()));
    }
    let mut buf = String::with_capacity(64 * trace.records.len());
    buf.push_str(TRACE_HEADER);
    buf.push('\n');
    for rec in &trace.records {
        for (j, r) in rec.regions.iter().enumerate() {
            buf.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                rec.t,
                format_sig12(rec.eta),
                j,
                format_sig12(r.x),
                ext(r.zeta),
                ext(r.z_min),
                format_sig12(r.alpha),
                format_sig12(r.p)
            ));
        }
    }
    out.write_all(buf.as_bytes())
        .map_err(|e| Error::io("<trace>", e))
}

/// Writes the trace CSV to `path`.
pub fn emit_trace(trace: &RunTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_trace(trace, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig12_matches_printf() {
        let cases = [
            (0.3, "0.3"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (1.0 / 3.0, "0.333333333333"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (0.1 + 0.2, "0.3"),
            (999999999999.5, "1e+12"),
        ];
        for (v, want) in cases {
            assert_eq!(format_sig12(v), want, "{v}");
        }
        assert_eq!(format_sig12(f64::INFINITY), "inf");
    }
}
