use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::error::{Error, Result};

fn overlap<'a>(pred: &'a [f64], reference: &'a [f64]) -> Result<impl Iterator<Item = (f64, f64)> + Clone + 'a> {
    if pred.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "series lengths differ ({} vs {})",
            pred.len(),
            reference.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(reference)
        .filter(|(p, r)| p.is_finite() && r.is_finite())
        .map(|(p, r)| (*p, *r)))
}

/// Root mean square error over the positions where both series are finite.
pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    let (mut n, mut sse) = (0usize, 0.0);
    for (p, r) in overlap(pred, reference)? {
        n += 1;
        sse += (r - p) * (r - p);
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok((sse / n as f64).sqrt())
}

/// Explained variance in percent, `100 (1 − Σ(y − ŷ)² / Σ(y − ȳ)²)`. Can
/// be negative.
pub fn explained_variance(pred: &[f64], reference: &[f64]) -> Result<f64> {
    let pairs = overlap(pred, reference)?;
    let (n, sum) = pairs.clone().fold((0usize, 0.0), |(n, s), (_, r)| (n + 1, s + r));
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let mean = sum / n as f64;
    let (sse, sst) = pairs.fold((0.0, 0.0), |(e, t), (p, r)| (e + (r - p) * (r - p), t + (r - mean) * (r - mean)));
    if !(sst > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(100.0 * (1.0 - sse / sst))
}

/// Strictly negative values.
pub fn negative_count(series: &[f64]) -> usize {
    series.iter().filter(|v| **v < 0.0).count()
}

/// A corrected value next to its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub site: usize,
    pub hour: usize,
    pub predicted: f64,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourlyPoint {
    pub time: DateTime<Utc>,
    pub hour_of_day: u32,
    pub rmse: f64,
}

/// Spread of RMSE(t) within one hour of day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HourSummary {
    pub hour_of_day: u32,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HourlyRmse {
    pub points: Vec<HourlyPoint>,
    pub summary: Vec<HourSummary>,
    /// Timestamps without a prediction and reference for every site.
    pub skipped: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// RMSE across sites at each timestamp, `√((1/q) Σ_j (y_t(s_j) − ŷ_t(s_j))²)`,
/// and its distribution per hour of day. A timestamp counts only when all
/// `sites` have a prediction with a reference.
pub fn rmse_by_hour(
    predictions: &[Prediction],
    sites: &[usize],
    time_of: &dyn Fn(usize) -> DateTime<Utc>,
) -> HourlyRmse {
    let mut by_time: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for p in predictions {
        if let Some(r) = p.reference.filter(|r| r.is_finite() && p.predicted.is_finite()) {
            if sites.contains(&p.site) {
                by_time.entry(p.hour).or_default().insert(p.site, r - p.predicted);
            }
        }
    }
    let mut out = HourlyRmse::default();
    let all_hours: std::collections::BTreeSet<usize> = predictions.iter().map(|p| p.hour).collect();
    for h in all_hours {
        match by_time.get(&h) {
            Some(errs) if errs.len() == sites.len() && !sites.is_empty() => {
                let mse = errs.values().map(|e| e * e).sum::<f64>() / sites.len() as f64;
                let time = time_of(h);
                out.points.push(HourlyPoint {
                    time,
                    hour_of_day: chrono::Timelike::hour(&time),
                    rmse: mse.sqrt(),
                });
            }
            _ => out.skipped += 1,
        }
    }
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for p in &out.points {
        groups.entry(p.hour_of_day).or_default().push(p.rmse);
    }
    for (hod, mut v) in groups {
        v.sort_by(f64::total_cmp);
        out.summary.push(HourSummary {
            hour_of_day: hod,
            n: v.len(),
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeDelta, TimeZone};
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]).unwrap(), 2.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[f64::NAN], &[1.0]), Err(Error::EmptyOverlap)));
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyOverlap)));
    }

    #[test]
    fn ev_examples() {
        let y = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(explained_variance(&y, &y).unwrap(), 100.0);
        let mean = [3.75; 4];
        assert!(explained_variance(&mean, &y).unwrap().abs() < 1e-12);
        assert!(explained_variance(&[8.0, 1.0, 8.0, 1.0], &y).unwrap() < 0.0);
        assert!(matches!(explained_variance(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn negatives() {
        assert_eq!(negative_count(&[1.0, 2.0, 0.5]), 0);
        assert_eq!(negative_count(&[-1.0, 0.0, 2.0]), 1);
    }

    fn time(h: usize) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 7, 1, 0, 0, 0).unwrap() + TimeDelta::hours(h as i64)
    }

    #[test]
    fn hourly_single_site_is_abs_error() {
        let preds: Vec<_> = (0..30)
            .map(|h| Prediction {
                site: 0,
                hour: h,
                predicted: h as f64,
                reference: Some(2.0 * h as f64 - 5.0),
            })
            .collect();
        let out = rmse_by_hour(&preds, &[0], &time);
        assert_eq!(out.points.len(), 30);
        for (p, h) in out.points.iter().zip(0..) {
            assert_eq!(p.rmse, (h as f64 - 5.0).abs());
        }
    }

    #[test]
    fn hourly_constant_error_and_skips() {
        let mut preds = Vec::new();
        for h in 0..48 {
            for s in 0..3 {
                if h == 7 && s == 2 {
                    continue;
                }
                preds.push(Prediction {
                    site: s,
                    hour: h,
                    predicted: 10.0 + s as f64,
                    reference: Some(12.5 + s as f64),
                });
            }
        }
        let out = rmse_by_hour(&preds, &[0, 1, 2], &time);
        assert_eq!(out.skipped, 1);
        assert_eq!(out.points.len(), 47);
        assert!(out.points.iter().all(|p| (p.rmse - 2.5).abs() < 1e-12));
        assert_eq!(out.summary.len(), 24);
        assert_eq!(out.summary[7].n, 1);
    }

    proptest! {
        #[test]
        fn ev_rmse_consistency(pairs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..60)) {
            let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let reference: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let n = reference.len() as f64;
            let mean = reference.iter().sum::<f64>() / n;
            let var = reference.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
            prop_assume!(var > 1e-6);
            let ev = explained_variance(&pred, &reference).unwrap();
            let e = rmse(&pred, &reference).unwrap();
            let alt = 100.0 * (1.0 - e * e / var);
            prop_assert!((ev - alt).abs() <= 1e-9 * ev.abs().max(alt.abs()).max(1.0));
        }
    }
}
