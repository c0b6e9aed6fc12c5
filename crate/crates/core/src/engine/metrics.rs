//! Per-round metrics rows and their CSV form.

use std::io::Write;

use crate::Result;

pub const METRICS_HEADER: &str =
    "round,train_loss,grad_norm_sq,heterogeneity,uplink_bits,lemma2_lhs,lemma2_rhs,comp_err,mom_dev,mean_mom_dev";

/// One evaluated round. Diagnostics that do not apply are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub train_loss: f64,
    pub grad_norm_sq: f64,
    pub heterogeneity: f64,
    /// Cumulative uplink bits, initial messages included.
    pub uplink_bits: u64,
    pub lemma2_lhs: f64,
    pub lemma2_rhs: f64,
    pub comp_err: f64,
    pub mom_dev: f64,
    pub mean_mom_dev: f64,
}

impl RoundMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{},{:?},{:?},{:?},{:?},{:?}",
            self.round,
            self.train_loss,
            self.grad_norm_sq,
            self.heterogeneity,
            self.uplink_bits,
            self.lemma2_lhs,
            self.lemma2_rhs,
            self.comp_err,
            self.mom_dev,
            self.mean_mom_dev
        )
    }

    /// True when the row carries a comparable aggregation-error bound.
    pub fn lemma2_holds(&self) -> Option<bool> {
        if self.lemma2_rhs.is_nan() {
            None
        } else {
            Some(self.lemma2_lhs <= self.lemma2_rhs * (1.0 + super::diagnostics::LEMMA2_SLACK))
        }
    }
}

pub fn write_metrics_csv<W: Write>(w: &mut W, rows: &[RoundMetrics]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", row.csv_row())?;
    }
    Ok(())
}

pub fn metrics_csv_string(rows: &[RoundMetrics]) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}
