//! Metrics CSV.

use std::fmt::Write as _;

use dxmi_core::trainer::MetricsRow;

use crate::CliError;

pub const HEADER: &str = "step,epoch,energy_data,energy_neg,ebm_loss,td_loss,policy_loss,mean_logsigma,sw,auc";

/// One CSV line without the newline. `{}` on f64 is the shortest decimal
/// that parses back to the same bits.
pub fn format_row(r: &MetricsRow) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::new();
    write!(
        s,
        "{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.epoch,
        r.energy_data,
        r.energy_neg,
        r.ebm_loss,
        r.td_loss,
        r.policy_loss,
        r.mean_logsigma,
        opt(r.sw),
        opt(r.auc)
    )
    .unwrap();
    s
}

pub fn format_rows(rows: &[MetricsRow]) -> String {
    rows.iter().map(|r| format_row(r) + "\n").collect()
}

pub fn parse_row(line: &str) -> Result<MetricsRow, CliError> {
    let bad = || CliError::Io(format!("malformed metrics row `{line}`"));
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 10 {
        return Err(bad());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    Ok(MetricsRow {
        step: f[0].parse().map_err(|_| bad())?,
        epoch: f[1].parse().map_err(|_| bad())?,
        energy_data: num(f[2])?,
        energy_neg: num(f[3])?,
        ebm_loss: num(f[4])?,
        td_loss: num(f[5])?,
        policy_loss: num(f[6])?,
        mean_logsigma: num(f[7])?,
        sw: opt(f[8])?,
        auc: opt(f[9])?,
    })
}

/// Existing body lines with `step ≤ max_step`, for resuming into the same file.
pub fn lines_up_to(text: &str, max_step: u64) -> Result<Vec<String>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(HEADER) => {}
        _ => return Err(CliError::Io("metrics file has an unexpected header".into())),
    }
    let mut kept = vec![];
    for l in lines.filter(|l| !l.is_empty()) {
        if parse_row(l)?.step <= max_step {
            kept.push(l.to_string());
        }
    }
    Ok(kept)
}
