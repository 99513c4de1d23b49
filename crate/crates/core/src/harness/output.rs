//! CSV and manifest emission.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{format_real, write_atomic};
use crate::error::Result;
use crate::oracle::DiagnosticsRow;

/// One metrics row: an epoch summary, or a single step when diagnostics are on.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub kind: RecordKind,
    /// Zero-based epoch.
    pub epoch: u32,
    /// Global step count after this row (1-based).
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub top1_err_pct: Option<f64>,
    pub lr: f64,
    pub r_estimate: Option<f64>,
    pub diagnostics: Option<DiagnosticsRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Epoch,
    Step,
}

pub const METRICS_HEADER: &str =
    "kind,epoch,step,train_loss,val_loss,top1_err_pct,lr,r_estimate,angle_deg,hv,s_k,lambda1,lambda2,v_norm,floor_hits";

pub const DIAGNOSTICS_HEADER: &str = "step,angle_deg,hv,lambda1,lambda2,s_k,v_norm,floor_hits";

fn opt(x: Option<f64>) -> String {
    x.map(format_real).unwrap_or_default()
}

pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 160);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let kind = match r.kind {
            RecordKind::Epoch => "epoch",
            RecordKind::Step => "step",
        };
        let _ = write!(
            out,
            "{kind},{},{},{},{},{},{},{}",
            r.epoch,
            r.step,
            format_real(r.train_loss),
            opt(r.val_loss),
            opt(r.top1_err_pct),
            format_real(r.lr),
            opt(r.r_estimate),
        );
        match &r.diagnostics {
            Some(d) => {
                let _ = write!(
                    out,
                    ",{},{},{},{},{},{},{}",
                    format_real(d.angle_deg),
                    format_real(d.hv),
                    format_real(d.s_k),
                    format_real(d.lambda1),
                    format_real(d.lambda2),
                    format_real(d.v_norm),
                    d.floor_hits
                );
            }
            None => out.push_str(",,,,,,,"),
        }
        out.push('\n');
    }
    out
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow]) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for d in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            d.step,
            format_real(d.angle_deg),
            format_real(d.hv),
            format_real(d.lambda1),
            format_real(d.lambda2),
            format_real(d.s_k),
            format_real(d.v_norm),
            d.floor_hits
        );
    }
    out
}

/// SHA-256 over the git blob framing `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_blob_framing() {
        // sha256 of "blob 0\0"
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn epoch_rows_leave_diagnostic_columns_empty() {
        let csv = metrics_csv(&[RunRecord {
            kind: RecordKind::Epoch,
            epoch: 0,
            step: 10,
            train_loss: 0.5,
            val_loss: Some(0.25),
            top1_err_pct: None,
            lr: 1.0,
            r_estimate: None,
            diagnostics: None,
        }]);
        let row = csv.lines().nth(1).unwrap();
        assert_eq!(row.split(',').count(), METRICS_HEADER.split(',').count());
        assert!(row.starts_with("epoch,0,10,5.0000000000000000e-1,2.5000000000000000e-1,,"));
    }
}
