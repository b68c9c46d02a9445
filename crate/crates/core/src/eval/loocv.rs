use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{explained_variance, rmse, Prediction};
use crate::error::{Error, Result};
use crate::gwr::{correct, Calibrator, CovariateSet, LocalModel, ModelKind, WlsOptions};
use crate::kernel::{KernelKind, KernelSpec};
use crate::preprocess::{Panel, Role};

/// Models for one site: a single model, or one per hour of day.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteModels {
    models: Vec<LocalModel>,
}

impl SiteModels {
    pub fn single(model: LocalModel) -> Self {
        Self { models: vec![model] }
    }

    /// `models[h]` applies to hour of day `h`.
    pub fn hourly(models: Vec<LocalModel>) -> Result<Self> {
        if models.len() != 24 {
            return Err(Error::InvalidInput(format!("{} hourly models, 24 expected", models.len())));
        }
        Ok(Self { models })
    }

    pub fn for_hour(&self, hour_of_day: u32) -> &LocalModel {
        if self.models.len() == 24 {
            &self.models[hour_of_day as usize]
        } else {
            &self.models[0]
        }
    }

    pub fn models(&self) -> &[LocalModel] {
        &self.models
    }

    /// Corrected values of `site` at the hours accepted by `include_hour`.
    pub fn predict(&self, panel: &Panel, site: usize, include_hour: &dyn Fn(usize) -> bool) -> Vec<Prediction> {
        panel
            .site_cells(site)
            .filter(|(h, _)| include_hour(*h))
            .filter_map(|(h, cell)| {
                correct(self.for_hour(panel.hour_of_day(h)), cell)
                    .ok()
                    .map(|predicted| Prediction {
                        site,
                        hour: h,
                        predicted,
                        reference: cell.reference,
                    })
            })
            .collect()
    }
}

/// Models of a calibrator at one site, with every site in `skip` left out.
pub(crate) fn site_models(
    cal: &Calibrator,
    site: usize,
    kernel: &KernelSpec,
    skip: &dyn Fn(usize) -> bool,
) -> Result<SiteModels> {
    match kernel.kind {
        KernelKind::Gaussian => Ok(SiteModels::single(cal.model_for_site(site, kernel, None, skip)?)),
        KernelKind::Gtwr => SiteModels::hourly(
            (0..24)
                .map(|h| cal.model_for_site(site, kernel, Some(h), skip))
                .collect::<Result<_>>()?,
        ),
    }
}

pub(crate) fn score(preds: &[Prediction]) -> (usize, Option<f64>, Option<f64>) {
    let (p, r): (Vec<f64>, Vec<f64>) = preds.iter().filter_map(|x| x.reference.map(|r| (x.predicted, r))).unzip();
    (p.len(), rmse(&p, &r).ok(), explained_variance(&p, &r).ok())
}

/// Outcome of one held-out site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fold {
    pub site: String,
    pub rows: usize,
    pub rmse: Option<f64>,
    pub ev: Option<f64>,
    /// Why the fold produced no score.
    pub failure: Option<String>,
    /// The failure came from an ill-conditioned fit.
    pub singular: bool,
    #[serde(skip)]
    pub models: Option<SiteModels>,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoocvResult {
    pub kind: ModelKind,
    pub kernel: KernelSpec,
    pub folds: Vec<Fold>,
    /// Mean of the fold RMSEs over the folds that produced one.
    pub cv_rmse: f64,
}

impl LoocvResult {
    pub fn failed(&self) -> usize {
        self.folds.iter().filter(|f| f.rmse.is_none()).count()
    }

    pub fn predictions(&self) -> impl Iterator<Item = &Prediction> {
        self.folds.iter().flat_map(|f| f.predictions.iter())
    }
}

/// Collocated sensors that can be held out.
pub fn fold_sites(panel: &Panel) -> Vec<usize> {
    panel.sites_with_role(Role::CollocatedSensor)
}

/// Leave-one-station-out cross-validation. Each collocated sensor is held
/// out in turn together with every sensor sharing its station; the model
/// is fit on the others' rows in `fit_hours` and scored on the held-out
/// site's rows in `score_hours`.
pub fn loocv(
    panel: &Panel,
    kind: ModelKind,
    kernel: &KernelSpec,
    covariates: &CovariateSet,
    fit_hours: &(dyn Fn(usize) -> bool + Sync),
    score_hours: &(dyn Fn(usize) -> bool + Sync),
    opts: WlsOptions,
) -> Result<LoocvResult> {
    let sites = fold_sites(panel);
    if sites.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "cross-validation needs two collocated sites, found {}",
            sites.len()
        )));
    }
    let cal = Calibrator::new(panel, kind, covariates, &sites, fit_hours, opts)?;
    loocv_with(&cal, panel, kernel, score_hours)
}

/// [`loocv`] with a prepared calibrator, whose fitting sites are the fold
/// sites.
pub fn loocv_with(
    cal: &Calibrator,
    panel: &Panel,
    kernel: &KernelSpec,
    score_hours: &(dyn Fn(usize) -> bool + Sync),
) -> Result<LoocvResult> {
    kernel.validate()?;
    let sites = fold_sites(panel);
    let folds: Vec<Fold> = sites
        .par_iter()
        .map(|&held| {
            let station = panel.station_of(held);
            let skip = |s: usize| s == held || (station.is_some() && panel.station_of(s) == station);
            let id = panel.site(held).id.clone();
            match site_models(cal, held, kernel, &skip) {
                Ok(models) => {
                    let predictions = models.predict(panel, held, score_hours);
                    let (rows, rmse, ev) = score(&predictions);
                    Fold {
                        site: id,
                        rows,
                        rmse,
                        ev,
                        failure: rmse.is_none().then(|| "no scored rows".to_string()),
                        singular: false,
                        models: Some(models),
                        predictions,
                    }
                }
                Err(e) => Fold {
                    site: id,
                    rows: 0,
                    rmse: None,
                    ev: None,
                    failure: Some(e.to_string()),
                    singular: e.is_numerical(),
                    models: None,
                    predictions: Vec::new(),
                },
            }
        })
        .collect();
    let scored: Vec<f64> = folds.iter().filter_map(|f| f.rmse).collect();
    for f in folds.iter().filter(|f| f.failure.is_some()) {
        log::warn!("fold {} excluded: {}", f.site, f.failure.as_deref().unwrap_or(""));
    }
    if scored.is_empty() {
        let first = folds.iter().find_map(|f| f.failure.clone()).unwrap_or_default();
        return Err(if folds.iter().all(|f| f.singular) {
            Error::SingularFit { condition: f64::INFINITY }
        } else {
            Error::InsufficientData(format!("every cross-validation fold failed: {first}"))
        });
    }
    Ok(LoocvResult {
        kind: cal.kind(),
        kernel: *kernel,
        cv_rmse: scored.iter().sum::<f64>() / scored.len() as f64,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthPoint {
    pub bandwidth: f64,
    pub cv_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthCurve {
    pub kind: ModelKind,
    pub points: Vec<BandwidthPoint>,
    pub best: f64,
}

/// Candidate bandwidths 200 m to 5000 m in 20 m steps.
pub fn default_candidates() -> Vec<f64> {
    (0..=240).map(|i| 200.0 + 20.0 * i as f64).collect()
}

/// Cross-validated RMSE for every candidate bandwidth, all on the same
/// fit and score samples. The minimum wins; ties go to the smaller
/// bandwidth.
pub fn bandwidth_search(
    panel: &Panel,
    kind: ModelKind,
    kernel: &KernelSpec,
    candidates: &[f64],
    covariates: &CovariateSet,
    fit_hours: &(dyn Fn(usize) -> bool + Sync),
    score_hours: &(dyn Fn(usize) -> bool + Sync),
    opts: WlsOptions,
) -> Result<BandwidthCurve> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate bandwidths".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let sites = fold_sites(panel);
    if sites.len() < 2 {
        return Err(Error::InsufficientData("bandwidth search needs two collocated sites".into()));
    }
    let cal = Calibrator::new(panel, kind, covariates, &sites, fit_hours, opts)?;
    let points: Vec<BandwidthPoint> = sorted
        .par_iter()
        .map(|&b| {
            let cv = kernel
                .with_bandwidth(b)
                .and_then(|k| loocv_with(&cal, panel, &k, score_hours))
                .ok()
                .map(|r| r.cv_rmse);
            BandwidthPoint { bandwidth: b, cv_rmse: cv }
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for p in &points {
        if let Some(cv) = p.cv_rmse {
            if best.is_none_or(|(_, v)| cv < v) {
                best = Some((p.bandwidth, cv));
            }
        }
    }
    let (best, _) = best.ok_or(Error::SingularFit { condition: f64::INFINITY })?;
    Ok(BandwidthCurve { kind, points, best })
}
