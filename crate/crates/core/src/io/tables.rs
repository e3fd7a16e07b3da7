//! CSV tables: cumulant dumps, Gaussian-fit summaries and visibility sweeps.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::estimator::CumulantStack;

/// One row per pixel: `i, j, k1..kJ` (`i` column, `j` row).
pub fn write_cumulant_csv<W: Write>(out: W, k: &CumulantStack) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["i".to_string(), "j".to_string()];
    header.extend((1..=k.orders()).map(|o| format!("k{o}")));
    w.write_record(&header)?;
    for row in 0..k.height() {
        for col in 0..k.width() {
            let p = row * k.width() + col;
            let mut rec = vec![col.to_string(), row.to_string()];
            rec.extend((1..=k.orders()).map(|o| format!("{:e}", k.get(o, p))));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitRow {
    pub label: String,
    pub order: usize,
    pub sigma: f64,
    pub stderr: f64,
    pub enhancement: f64,
    pub enhancement_stderr: f64,
}

pub fn write_fit_table<W: Write>(out: W, rows: &[FitRow]) -> Result<()> {
    write_rows(out, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VisibilityRow {
    /// Mean photon number per emission event.
    pub m: u32,
    pub fano_detected: f64,
    pub mean_detected: f64,
    pub v_sofi: f64,
    pub v_qsips: f64,
}

pub fn write_visibility_sweep<W: Write>(out: W, rows: &[VisibilityRow]) -> Result<()> {
    write_rows(out, rows)
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
