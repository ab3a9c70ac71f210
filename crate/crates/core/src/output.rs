//! CSV and JSON outputs.
//!
//! Floats are written with 17 significant digits so every value reads back
//! to the same `f64`.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::analytic::AnalyticSolution;
use crate::ensemble::{ConvergenceReport, EnsembleCurve, SeriesEstimate};
use crate::error::{Error, Result};

pub const CURVE_HEADER: [&str; 11] = [
    "t",
    "mean_overlap",
    "se_overlap",
    "mean_z",
    "se_z",
    "mean_log_z",
    "se_log_z",
    "mean_n",
    "mean_z2",
    "se_n",
    "se_z2",
];

pub const CURVE_FILE: &str = "curve.csv";
pub const REPORT_FILE: &str = "report.json";

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_owned()
    } else if v > 0.0 {
        "inf".to_owned()
    } else {
        "-inf".to_owned()
    }
}

pub fn write_curve_csv<W: Write>(curve: &EnsembleCurve, mut out: W) -> Result<()> {
    writeln!(out, "{}", CURVE_HEADER.join(","))?;
    for k in 0..curve.len() {
        let row = [
            curve.times[k],
            curve.overlap.mean[k],
            curve.overlap.std_err[k],
            curve.z.mean[k],
            curve.z.std_err[k],
            curve.log_z.mean[k],
            curve.log_z.std_err[k],
            curve.n.mean[k],
            curve.z2.mean[k],
            curve.n.std_err[k],
            curve.z2.std_err[k],
        ];
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Reads a curve written by [`write_curve_csv`]. Path counts are not part of
/// the table and come back as zero.
pub fn read_curve_csv<R: BufRead>(input: R) -> Result<EnsembleCurve> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    if header.trim() != CURVE_HEADER.join(",") {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header `{header}`"),
        });
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); CURVE_HEADER.len()];
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CURVE_HEADER.len() {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("expected {} fields, got {}", CURVE_HEADER.len(), fields.len()),
            });
        }
        for (col, field) in cols.iter_mut().zip(fields) {
            let v = field.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: i + 2,
                message: format!("`{field}`: {e}"),
            })?;
            col.push(v);
        }
    }
    let mut cols = cols.into_iter();
    let mut next = || cols.next().expect("column count fixed by header");
    let times = next();
    let overlap = SeriesEstimate { mean: next(), std_err: next() };
    let z = SeriesEstimate { mean: next(), std_err: next() };
    let log_z = SeriesEstimate { mean: next(), std_err: next() };
    let (n_mean, z2_mean, n_se, z2_se) = (next(), next(), next(), next());
    Ok(EnsembleCurve {
        times,
        overlap,
        z,
        log_z,
        n: SeriesEstimate { mean: n_mean, std_err: n_se },
        z2: SeriesEstimate { mean: z2_mean, std_err: z2_se },
        n_paths: 0,
        clamp_events: 0,
    })
}

pub fn write_report_json<W: Write>(report: &ConvergenceReport, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out)?;
    Ok(())
}

pub const ANALYTIC_HEADER: &str = "beta,a,alpha_minus,alpha_plus,free_energy,rate_lambda,limit";

pub fn write_analytic_table<W: Write>(rows: &[AnalyticSolution], mut out: W) -> Result<()> {
    writeln!(out, "{ANALYTIC_HEADER}")?;
    for s in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(s.beta),
            fmt_f64(s.a),
            fmt_f64(s.alpha_minus),
            fmt_f64(s.alpha_plus),
            fmt_f64(s.free_energy),
            fmt_f64(s.rate_lambda),
            s.is_limit
        )?;
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "beta,alpha_minus_hat,alpha_minus_se,alpha_minus,abs_error,\
fe_hat_extrapolated,fe_hat_direct,fe_hat_overlap,free_energy,stationary_overlap";

pub fn write_sweep_table<W: Write>(reports: &[ConvergenceReport], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in reports {
        let row = [
            r.beta,
            r.overlap_limit_hat,
            r.overlap_limit_se,
            r.alpha_minus_ref,
            r.abs_error,
            r.fe_hat_extrapolated,
            r.fe_hat_direct,
            r.fe_hat_overlap,
            r.fe_ref,
            r.stationary_overlap_ref,
        ];
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Writes `curve.csv` and `report.json` into an existing directory. Both
/// files are rendered before anything touches the disk.
pub fn write_run(dir: &Path, curve: &EnsembleCurve, report: &ConvergenceReport) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", dir.display()),
        )));
    }
    let mut csv = Vec::new();
    write_curve_csv(curve, &mut csv)?;
    let mut json = Vec::new();
    write_report_json(report, &mut json)?;
    fs::write(dir.join(CURVE_FILE), csv)?;
    fs::write(dir.join(REPORT_FILE), json)?;
    Ok(())
}
