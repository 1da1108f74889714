//! CSV output.
//!
//! Column layouts are fixed:
//!
//! - trace: `k, sent, gamma1, gamma2, trP1, trP2, err1, err2, x_0.., xhat1_0.., xhat2_0..`
//! - sweep: `M, p_star, trS, trV`
//! - expected-error curve: `k, mean_trP, sample_mean_trP`
//!
//! Booleans are `0`/`1`; infinite values are `inf`.

use std::io::Write;

use crate::designer::TradeoffCurve;
use crate::montecarlo::{ExpectedErrorCurve, SimulationTrace};
use crate::serde_ext::format_extended;
use crate::Result;

pub const TRACE_COLUMNS: [&str; 8] = ["k", "sent", "gamma1", "gamma2", "trP1", "trP2", "err1", "err2"];
pub const SWEEP_COLUMNS: [&str; 4] = ["M", "p_star", "trS", "trV"];
pub const CURVE_COLUMNS: [&str; 3] = ["k", "mean_trP", "sample_mean_trP"];

pub fn trace_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = TRACE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for prefix in ["x", "xhat1", "xhat2"] {
        h.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    h
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

pub fn write_trace_csv<W: Write>(out: W, trace: &SimulationTrace) -> Result<()> {
    let n = trace.records.first().map_or(0, |r| r.x.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n))?;
    for r in &trace.records {
        let mut row = vec![
            r.k.to_string(),
            flag(r.sent),
            flag(r.gamma1),
            flag(r.gamma2),
            format_extended(r.tr_p1),
            format_extended(r.tr_p2),
            format_extended(r.err1),
            format_extended(r.err2),
        ];
        for v in [&r.x, &r.xhat1, &r.xhat2] {
            row.extend(v.iter().map(|x| format_extended(*x)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(out: W, curve: &TradeoffCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for p in &curve.points {
        w.write_record([
            format_extended(p.secrecy_floor),
            format_extended(p.p_star),
            format_extended(p.tr_s),
            format_extended(p.tr_v),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv<W: Write>(out: W, curve: &ExpectedErrorCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_COLUMNS)?;
    for (i, k) in curve.k.iter().enumerate() {
        let sample = curve.sample_mean_tr_p.get(i).copied().unwrap_or(f64::NAN);
        w.write_record([k.to_string(), format_extended(curve.mean_tr_p[i]), format_extended(sample)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, Mechanism};
    use crate::designer::TradeoffPoint;
    use crate::montecarlo::simulate_trace;
    use crate::LinearSystem;
    use nalgebra::DMatrix;

    fn lines(buf: Vec<u8>) -> Vec<String> {
        String::from_utf8(buf).unwrap().lines().map(str::to_string).collect()
    }

    #[test]
    fn trace_header_golden() {
        assert_eq!(
            trace_header(2).join(","),
            "k,sent,gamma1,gamma2,trP1,trP2,err1,err2,x_0,x_1,xhat1_0,xhat1_1,xhat2_0,xhat2_1"
        );
    }

    #[test]
    fn trace_rows() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.2, 1.0, 0.0, 1.1]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            q.clone(),
            DMatrix::from_element(1, 1, 1.0),
            q,
        )
        .unwrap();
        let ch = ChannelParams::new(0.9, 0.6).unwrap();
        let t = simulate_trace(&sys, &Mechanism::transparent(), &ch, 0, 1).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &t).unwrap();
        let l = lines(buf);
        assert_eq!(l.len(), 2);
        assert!(l[1].starts_with("0,1,"));
        assert_eq!(l[1].split(',').count(), 14);
    }

    #[test]
    fn sweep_golden() {
        let curve = TradeoffCurve {
            points: vec![TradeoffPoint { secrecy_floor: 10.0, p_star: 0.5, tr_s: 10.0, tr_v: f64::INFINITY }],
            channel: ChannelParams::new(0.7, 0.7).unwrap(),
        };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &curve).unwrap();
        assert_eq!(lines(buf), vec!["M,p_star,trS,trV", "10,0.5,10,inf"]);
    }

    #[test]
    fn curve_golden() {
        let curve = ExpectedErrorCurve {
            k: vec![0, 1],
            mean_tr_p: vec![1.0, 2.5],
            sample_mean_tr_p: vec![1.0, 2.0],
            runs: 2,
            rate: 0.5,
            receiver: None,
        };
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &curve).unwrap();
        assert_eq!(lines(buf), vec!["k,mean_trP,sample_mean_trP", "0,1,1", "1,2.5,2"]);
    }
}
