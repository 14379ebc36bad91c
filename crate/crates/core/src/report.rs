//! CSV emitters for metric logs, cross-evaluation grids and proportion scatter data.

use std::io::Write;

use crate::error::Result;
use crate::eval::CrossEvalMatrix;
use crate::federation::RoundMetrics;

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_header(m: usize) -> String {
    let mut cols = vec!["round".to_string(), "division_event".to_string()];
    cols.extend((0..m).map(|j| format!("train_loss_{j}")));
    cols.extend((0..m).map(|j| format!("test_acc_{j}")));
    cols.extend(["alpha_mae", "division_error", "bytes_up", "bytes_down"].map(String::from));
    cols.join(",")
}

/// One header line plus one row per round. Missing values are empty cells.
pub fn write_metrics_csv<W: Write>(w: &mut W, metrics: &[RoundMetrics]) -> Result<()> {
    let m = metrics.first().map_or(0, |r| r.train_loss.len());
    writeln!(w, "{}", metrics_header(m))?;
    for r in metrics {
        let mut row = vec![r.round.to_string(), u8::from(r.division_event).to_string()];
        row.extend(r.train_loss.iter().map(|v| cell(*v)));
        row.extend(r.test_acc.iter().map(|v| cell(*v)));
        row.push(cell(r.alpha_mae));
        row.push(cell(r.division_error));
        row.push(r.bytes_up.to_string());
        row.push(r.bytes_down.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, metrics).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

/// True distributions as rows, learned experts as columns.
pub fn write_cross_eval_csv<W: Write>(w: &mut W, grid: &CrossEvalMatrix) -> Result<()> {
    let learned = grid.acc.len();
    let pools = grid.acc.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("true".to_string())
        .chain((0..learned).map(|j| format!("c_{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for k in 0..pools {
        let row: Vec<String> = std::iter::once(format!("p_{k}"))
            .chain((0..learned).map(|j| grid.acc[j][k].to_string()))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// `(client_id, true_alpha0, est_alpha0)` rows.
pub fn write_proportions_csv<W: Write>(w: &mut W, rows: &[(usize, f64, f64)]) -> Result<()> {
    writeln!(w, "client_id,true_alpha0,est_alpha0")?;
    for (i, t, e) in rows {
        writeln!(w, "{i},{t},{e}")?;
    }
    Ok(())
}
