use std::path::Path;

use super::DepthMetrics;
use crate::error::{Error, Result};
use crate::uq::Method;

pub const REPORT_HEADER: &str =
    "method,model,rmse,absrel,log10,delta1,delta2,delta3,p_acc_cer,p_unc_ina,pavpu,params,flops,infer_ms_mean,infer_ms_std,fps";

/// One line of the comparison table. `None` renders as `n/a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub model: String,
    /// `None` for rows that only carry efficiency numbers.
    pub depth: Option<DepthMetrics>,
    pub p_acc_cer: Option<f64>,
    pub p_unc_ina: Option<f64>,
    pub pavpu: Option<f64>,
    pub params: usize,
    pub flops: u64,
    pub infer_ms_mean: Option<f64>,
    pub infer_ms_std: Option<f64>,
    pub fps: Option<f64>,
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), num)
}

impl ReportRow {
    pub fn to_csv(&self) -> String {
        let d = self.depth;
        let dm = |f: fn(&DepthMetrics) -> f64| opt(d.as_ref().map(f));
        [
            self.method.name().to_string(),
            self.model.clone(),
            dm(|d| d.rmse),
            dm(|d| d.absrel),
            dm(|d| d.log10),
            dm(|d| d.delta1),
            dm(|d| d.delta2),
            dm(|d| d.delta3),
            opt(self.p_acc_cer),
            opt(self.p_unc_ina),
            opt(self.pavpu),
            self.params.to_string(),
            self.flops.to_string(),
            opt(self.infer_ms_mean),
            opt(self.infer_ms_std),
            opt(self.fps),
        ]
        .join(",")
    }

    fn parse(line: &str, path: &Path, ln: usize) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |m: String| Error::corrupt(path, format!("line {ln}: {m}"));
        if f.len() != 16 {
            return Err(bad(format!("expected 16 fields, found {}", f.len())));
        }
        let real = |i: usize| f[i].parse::<f64>().map_err(|_| bad(format!("bad number {:?}", f[i])));
        let maybe = |i: usize| if f[i] == "n/a" { Ok(None) } else { real(i).map(Some) };
        Ok(ReportRow {
            method: f[0].parse().map_err(|_| bad(format!("unknown method {:?}", f[0])))?,
            model: f[1].to_string(),
            depth: if f[2..8].iter().all(|v| *v == "n/a") {
                None
            } else {
                Some(DepthMetrics {
                    rmse: real(2)?,
                    absrel: real(3)?,
                    log10: real(4)?,
                    delta1: real(5)?,
                    delta2: real(6)?,
                    delta3: real(7)?,
                })
            },
            p_acc_cer: maybe(8)?,
            p_unc_ina: maybe(9)?,
            pavpu: maybe(10)?,
            params: f[11].parse().map_err(|_| bad(format!("bad params {:?}", f[11])))?,
            flops: f[12].parse().map_err(|_| bad(format!("bad flops {:?}", f[12])))?,
            infer_ms_mean: maybe(13)?,
            infer_ms_std: maybe(14)?,
            fps: maybe(15)?,
        })
    }
}

pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Parses a report written by [`format_report`]; `path` is for messages.
pub fn parse_report(text: &str, path: &Path) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::corrupt(path, "report header does not match"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| ReportRow::parse(l, path, i + 2))
        .collect()
}

/// Stable sort by model label, then by the canonical method order.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| a.model.cmp(&b.model).then(a.method.cmp(&b.method)));
}
