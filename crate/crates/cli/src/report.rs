// SPDX-License-Identifier: Apache-2.0
//! CSV reports. Comma separated, `.` decimal point, LF line endings.

use std::fmt::Write as _;

use litho_cfno::lgst::{LgstReport, TrainReport};
use litho_cfno::metrics::{score, ScoreWeights};

use crate::error::{IoError, Result};

pub const EVAL_HEADER: &str = "design,mse,epe,pvb,score,runtime_s";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub design: String,
    pub mse: f64,
    pub epe: f64,
    pub pvb: f64,
    pub runtime_s: f64,
}

impl EvalRow {
    pub fn score(&self, w: &ScoreWeights) -> Result<f64> {
        Ok(score(self.runtime_s, self.epe, self.pvb, 0.0, w)?)
    }
}

/// Column means over `rows`, labelled `average`.
pub fn average(rows: &[EvalRow]) -> EvalRow {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    EvalRow {
        design: "average".into(),
        mse: mean(|r| r.mse),
        epe: mean(|r| r.epe),
        pvb: mean(|r| r.pvb),
        runtime_s: mean(|r| r.runtime_s),
    }
}

/// Per-design rows, the average row and, given a reference average, a
/// `ratio` row of this run's averages over the reference's.
pub fn eval_csv(
    rows: &[EvalRow],
    reference: Option<&[f64; 5]>,
    w: &ScoreWeights,
) -> Result<String> {
    let mut s = format!("{EVAL_HEADER}\n");
    let avg = average(rows);
    for r in rows.iter().chain(std::iter::once(&avg)) {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.design,
            r.mse,
            r.epe,
            r.pvb,
            r.score(w)?,
            r.runtime_s
        )
        .expect("string write");
    }
    if let Some(reference) = reference {
        let ours = [avg.mse, avg.epe, avg.pvb, avg.score(w)?, avg.runtime_s];
        let ratio: Vec<String> = ours
            .iter()
            .zip(reference)
            .map(|(a, b)| {
                if *b == 0.0 {
                    "nan".to_string()
                } else {
                    (a / b).to_string()
                }
            })
            .collect();
        writeln!(s, "ratio,{}", ratio.join(",")).expect("string write");
    }
    Ok(s)
}

/// The `average` row of an eval CSV as `[mse, epe, pvb, score, runtime_s]`.
pub fn parse_eval_average(text: &str) -> Result<[f64; 5]> {
    let line = text
        .lines()
        .find(|l| l.starts_with("average,"))
        .ok_or_else(|| IoError::Format("eval report has no average row".into()))?;
    let vals: Vec<f64> = line
        .split(',')
        .skip(1)
        .map(|v| {
            v.parse()
                .map_err(|_| IoError::Format(format!("bad number `{v}` in average row")))
        })
        .collect::<Result<_>>()?;
    vals.try_into().map_err(|v: Vec<f64>| {
        IoError::Format(format!("average row has {} values, expected 5", v.len()))
    })
}

/// Total patterned area over runtime; `None` when no time was recorded.
pub fn throughput_um2_per_s(area_um2: f64, runtime_s: f64) -> Option<f64> {
    (runtime_s > 0.0).then(|| area_um2 / runtime_s)
}

pub fn ilt_csv(traces: &[(String, Vec<f64>)]) -> String {
    let mut s = "design,iter,loss\n".to_string();
    for (name, trace) in traces {
        for (i, l) in trace.iter().enumerate() {
            writeln!(s, "{name},{i},{l}").expect("string write");
        }
    }
    s
}

pub fn train_csv(reports: &[TrainReport]) -> String {
    let mut s = "stage,epoch,loss,holdout_mse\n".to_string();
    for (t, r) in reports.iter().enumerate() {
        for (e, l) in r.epoch_loss.iter().enumerate() {
            let h = r.holdout_mse.get(e).map_or(String::new(), f64::to_string);
            writeln!(s, "{t},{e},{l},{h}").expect("string write");
        }
    }
    s
}

pub fn lgst_csv(reports: &[LgstReport]) -> String {
    let mut s =
        "round,single_round_pct,accumulated_pct,mean_mse_before,mean_mse_after\n".to_string();
    for r in reports {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.round,
            100.0 * r.replaced_fraction,
            100.0 * r.accumulated_fraction,
            r.dataset_mean_mse_before,
            r.dataset_mean_mse_after
        )
        .expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, mse: f64, epe: f64, pvb: f64) -> EvalRow {
        EvalRow {
            design: name.into(),
            mse,
            epe,
            pvb,
            runtime_s: 0.0,
        }
    }

    #[test]
    fn average_row_is_the_column_mean() {
        let rows = [row("a", 10.0, 1.0, 100.0), row("b", 20.0, 4.0, 300.0)];
        let csv = eval_csv(&rows, None, &ScoreWeights::default()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], EVAL_HEADER);
        assert_eq!(lines[3], "average,15,2.5,200,13300,0");
        assert_eq!(
            parse_eval_average(&csv).unwrap(),
            [15.0, 2.5, 200.0, 13300.0, 0.0]
        );
    }

    #[test]
    fn ratio_row() {
        let rows = [row("a", 10.0, 2.0, 100.0)];
        let csv = eval_csv(
            &rows,
            Some(&[20.0, 4.0, 50.0, 1.0, 0.0]),
            &ScoreWeights::default(),
        )
        .unwrap();
        assert_eq!(csv.lines().last().unwrap(), "ratio,0.5,0.5,2,10400,nan");
    }

    #[test]
    fn lgst_rows_are_percentages() {
        let r = LgstReport {
            round: 2,
            replaced_count: 1,
            replaced_fraction: 0.25,
            accumulated_fraction: 0.5,
            dataset_mean_mse_before: 3.0,
            dataset_mean_mse_after: 2.0,
        };
        assert_eq!(lgst_csv(&[r]).lines().nth(1).unwrap(), "2,25,50,3,2");
    }

    #[test]
    fn throughput_needs_time() {
        assert_eq!(throughput_um2_per_s(36.0, 0.0), None);
        assert_eq!(throughput_um2_per_s(36.0, 2.0), Some(18.0));
    }
}
