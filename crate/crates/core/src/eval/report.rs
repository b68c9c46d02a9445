use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::EvalReport;
use crate::error::{Error, Result};
use crate::fmt::sig;

fn opt(v: Option<f64>) -> String {
    v.map(|v| sig(v, 12)).unwrap_or_default()
}

fn opt2(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_record(header).map_err(|e| Error::parse(path, e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl EvalReport {
    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let k = &self.kernel;
        let _ = writeln!(out, "kernel: {} bandwidth {} m", k.kind.token(), sig(k.bandwidth, 12));
        let _ = writeln!(out, "period: {} to {}", self.split.spec.start, self.split.spec.end);
        let _ = writeln!(out, "\nsample  days  achieved%  target%");
        for r in &self.split.rows {
            let _ = writeln!(out, "{:<6} {:>5} {:>10.1} {:>8.1}", r.set, r.days, r.percent, r.target_percent);
        }
        if !self.pairing.is_empty() {
            let _ = writeln!(out, "\nsensor -> paired station (provenance)");
            for (s, p) in self.pairing.iter() {
                let _ = writeln!(out, "{s} -> {} ({})", p.station, p.provenance.token());
            }
        }
        let _ = writeln!(out, "\nmodel  site            rows    RMSE      EV%  negatives");
        for s in &self.scores {
            let _ = writeln!(
                out,
                "{:<6} {:<14} {:>5} {:>7} {:>8} {:>10}{}",
                s.family.token(),
                s.site,
                s.rows,
                opt2(s.rmse),
                opt2(s.ev),
                s.negatives,
                s.failure.as_ref().map(|f| format!("  failed: {f}")).unwrap_or_default()
            );
        }
        for cv in &self.cv {
            let _ = writeln!(
                out,
                "\ncross-validation {} (B = {} m): CV RMSE {:.2}, {} of {} folds failed",
                cv.kind.family().token(),
                sig(cv.kernel.bandwidth, 12),
                cv.cv_rmse,
                cv.failed(),
                cv.folds.len()
            );
            for f in &cv.folds {
                let _ = writeln!(out, "  {:<14} {:>5} {:>7} {:>8}", f.site, f.rows, opt2(f.rmse), opt2(f.ev));
            }
        }
        if !self.negatives.is_empty() {
            let _ = writeln!(out, "\nnegative corrected values over all hours");
            for n in &self.negatives {
                let _ = writeln!(out, "  {:<6} {:<14} {:>5} of {}", n.family.token(), n.site, n.negatives, n.rows);
            }
        }
        for b in &self.bandwidth {
            let _ = writeln!(out, "\nbandwidth search {}: best {} m", b.kind.family().token(), sig(b.best, 12));
        }
        out
    }

    /// Writes the text report and the delimited tables into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let path = dir.join("report.txt");
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let mut table = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
            let path = dir.join(name);
            write_csv(&path, header, rows)?;
            written.push(path);
            Ok(())
        };
        table(
            "split.csv",
            &["sample", "days", "achieved_percent", "target_percent"],
            self.split
                .rows
                .iter()
                .map(|r| vec![r.set.to_string(), r.days.to_string(), sig(r.percent, 12), sig(r.target_percent, 12)])
                .collect(),
        )?;
        table(
            "pairing.csv",
            &["sensor", "station", "provenance"],
            self.pairing
                .iter()
                .map(|(s, p)| vec![s.to_string(), p.station.clone(), p.provenance.token().into()])
                .collect(),
        )?;
        table(
            "scores.csv",
            &["model", "site", "sample", "rows", "rmse", "ev", "negatives", "failure"],
            self.scores
                .iter()
                .map(|s| {
                    vec![
                        s.family.token().into(),
                        s.site.clone(),
                        s.sample.to_string(),
                        s.rows.to_string(),
                        opt(s.rmse),
                        opt(s.ev),
                        s.negatives.to_string(),
                        s.failure.clone().unwrap_or_default(),
                    ]
                })
                .collect(),
        )?;
        table(
            "cv_folds.csv",
            &["model", "kernel", "bandwidth", "site", "rows", "rmse", "ev", "failure"],
            self.cv
                .iter()
                .flat_map(|cv| {
                    cv.folds.iter().map(move |f| {
                        vec![
                            cv.kind.family().token().into(),
                            cv.kernel.kind.token().into(),
                            sig(cv.kernel.bandwidth, 12),
                            f.site.clone(),
                            f.rows.to_string(),
                            opt(f.rmse),
                            opt(f.ev),
                            f.failure.clone().unwrap_or_default(),
                        ]
                    })
                })
                .collect(),
        )?;
        table(
            "cv_summary.csv",
            &["model", "kernel", "bandwidth", "cv_rmse", "folds", "failed"],
            self.cv
                .iter()
                .map(|cv| {
                    vec![
                        cv.kind.family().token().into(),
                        cv.kernel.kind.token().into(),
                        sig(cv.kernel.bandwidth, 12),
                        sig(cv.cv_rmse, 12),
                        cv.folds.len().to_string(),
                        cv.failed().to_string(),
                    ]
                })
                .collect(),
        )?;
        table(
            "negatives.csv",
            &["model", "site", "rows", "negatives"],
            self.negatives
                .iter()
                .map(|n| vec![n.family.token().into(), n.site.clone(), n.rows.to_string(), n.negatives.to_string()])
                .collect(),
        )?;
        table(
            "hourly_rmse.csv",
            &["model", "time", "hour_of_day", "rmse"],
            self.hourly
                .iter()
                .flat_map(|(fam, h)| {
                    h.points.iter().map(move |p| {
                        vec![
                            fam.token().into(),
                            p.time.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
                            p.hour_of_day.to_string(),
                            sig(p.rmse, 12),
                        ]
                    })
                })
                .collect(),
        )?;
        table(
            "hourly_summary.csv",
            &["model", "hour_of_day", "n", "min", "q1", "median", "q3", "max", "skipped"],
            self.hourly
                .iter()
                .flat_map(|(fam, h)| {
                    h.summary.iter().map(move |s| {
                        vec![
                            fam.token().into(),
                            s.hour_of_day.to_string(),
                            s.n.to_string(),
                            sig(s.min, 12),
                            sig(s.q1, 12),
                            sig(s.median, 12),
                            sig(s.q3, 12),
                            sig(s.max, 12),
                            h.skipped.to_string(),
                        ]
                    })
                })
                .collect(),
        )?;
        table(
            "predictions.csv",
            &["model", "stage", "site", "hour_index", "predicted", "reference"],
            self.predictions
                .iter()
                .map(|p| {
                    vec![
                        p.family.token().into(),
                        p.stage.into(),
                        p.site.clone(),
                        p.prediction.hour.to_string(),
                        sig(p.prediction.predicted, 12),
                        opt(p.prediction.reference),
                    ]
                })
                .collect(),
        )?;
        if !self.bandwidth.is_empty() {
            table(
                "bandwidth_curve.csv",
                &["model", "bandwidth", "cv_rmse"],
                self.bandwidth
                    .iter()
                    .flat_map(|b| {
                        b.points.iter().map(move |p| {
                            vec![b.kind.family().token().into(), sig(p.bandwidth, 12), opt(p.cv_rmse)]
                        })
                    })
                    .collect(),
            )?;
        }
        Ok(written)
    }
}
