use std::fmt::Write as _;

use crate::error::Result;
use crate::protocol::SensorModel;
use crate::rasters::Raster;

use super::{ergas, mpsnr, q2n, qnr, sam, Q_BLOCK};

/// Fixed CSV column order.
pub const METRIC_HEADER: &str = "mpsnr,ergas,sam,q2n,d_lambda,d_s,qnr";

/// Quality scores; reference-based entries are absent without a reference.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub mpsnr: Option<f64>,
    pub ergas: Option<f64>,
    pub sam: Option<f64>,
    pub q2n: Option<f64>,
    pub d_lambda: Option<f64>,
    pub d_s: Option<f64>,
    pub qnr: Option<f64>,
}

impl MetricReport {
    pub fn values(&self) -> [Option<f64>; 7] {
        [self.mpsnr, self.ergas, self.sam, self.q2n, self.d_lambda, self.d_s, self.qnr]
    }

    /// One CSV row; absent values are empty fields.
    pub fn csv_row(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.values().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            if let Some(v) = v {
                write!(out, "{v}").expect("writing to a String");
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{METRIC_HEADER}\n{}\n", self.csv_row())
    }

    /// Parses the output of [`MetricReport::to_csv`].
    pub fn from_csv(text: &str) -> Option<MetricReport> {
        let mut lines = text.lines();
        if lines.next()? != METRIC_HEADER {
            return None;
        }
        let fields: Vec<&str> = lines.next()?.split(',').collect();
        if fields.len() != 7 {
            return None;
        }
        let mut v = [None; 7];
        for (slot, f) in v.iter_mut().zip(&fields) {
            if !f.is_empty() {
                *slot = Some(f.parse().ok()?);
            }
        }
        Some(MetricReport {
            mpsnr: v[0],
            ergas: v[1],
            sam: v[2],
            q2n: v[3],
            d_lambda: v[4],
            d_s: v[5],
            qnr: v[6],
        })
    }
}

/// Full-resolution indices always; reference-based ones when `reference`
/// is given (it must match `fused`).
pub fn evaluate(
    fused: &Raster,
    lrms: &Raster,
    pan: &Raster,
    reference: Option<&Raster>,
    model: &SensorModel,
) -> Result<MetricReport> {
    let scores = qnr(fused, lrms, pan, model)?;
    let mut report = MetricReport {
        d_lambda: Some(scores.d_lambda),
        d_s: Some(scores.d_s),
        qnr: Some(scores.qnr),
        ..Default::default()
    };
    if let Some(r) = reference {
        report.mpsnr = Some(mpsnr(fused, r)?);
        report.ergas = Some(ergas(fused, r, model.ratio)?);
        report.sam = Some(sam(fused, r)?);
        report.q2n = Some(q2n(fused, r, Q_BLOCK)?);
    }
    Ok(report)
}
