//! Sample splitting, scoring, cross-validation and bandwidth selection.

mod loocv;
mod metrics;
mod report;
mod split;

use rayon::prelude::*;
use serde::Serialize;

pub use crate::gwr::ModelKind;
pub use loocv::{
    bandwidth_search, default_candidates, fold_sites, loocv, loocv_with, BandwidthCurve, BandwidthPoint, Fold,
    LoocvResult, SiteModels,
};
pub use metrics::{
    explained_variance, negative_count, rmse, rmse_by_hour, HourSummary, HourlyPoint, HourlyRmse, Prediction,
};
pub use split::{split_days, DayLists, DaySet, Split, SplitSpec};

use crate::baseline::{fit_collocated, fit_noncollocated, PairingPlan};
use crate::error::{Error, Result};
use crate::gwr::{Calibrator, CovariateSet, ModelFamily, WlsOptions};
use crate::kernel::KernelSpec;
use crate::preprocess::{Panel, Role};

/// What a validation run fits and scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPlan {
    pub families: Vec<ModelFamily>,
    pub kernel: KernelSpec,
    pub covariates: CovariateSet,
    pub split: SplitSpec,
    pub pairing: PairingPlan,
    /// Runs the bandwidth search for the GWR families when set.
    pub bandwidth_candidates: Option<Vec<f64>>,
    pub opts: WlsOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitRow {
    pub set: DaySet,
    pub days: usize,
    pub percent: f64,
    pub target_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub spec: SplitSpec,
    pub rows: Vec<SplitRow>,
}

impl SplitSummary {
    pub fn new(spec: &SplitSpec, split: &Split) -> Self {
        Self {
            spec: spec.clone(),
            rows: DaySet::ALL
                .iter()
                .map(|&set| SplitRow {
                    set,
                    days: split.count(set),
                    percent: split.percent(set),
                    target_percent: set.target_percent(),
                })
                .collect(),
        }
    }
}

/// Test-sample score of one model at one sensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteScore {
    pub family: ModelFamily,
    pub site: String,
    pub sample: DaySet,
    pub rows: usize,
    pub rmse: Option<f64>,
    pub ev: Option<f64>,
    pub negatives: usize,
    pub failure: Option<String>,
}

/// Negative corrected values over every hour of a sensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegativeCount {
    pub family: ModelFamily,
    pub site: String,
    pub rows: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledPrediction {
    pub family: ModelFamily,
    /// `S2` for test-sample scoring, `CV` for held-out folds.
    pub stage: &'static str,
    pub site: String,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: SplitSummary,
    pub kernel: KernelSpec,
    pub pairing: PairingPlan,
    pub scores: Vec<SiteScore>,
    pub negatives: Vec<NegativeCount>,
    pub cv: Vec<LoocvResult>,
    pub hourly: Vec<(ModelFamily, HourlyRmse)>,
    pub bandwidth: Vec<BandwidthCurve>,
    pub predictions: Vec<LabeledPrediction>,
}

impl EvalReport {
    pub fn score(&self, family: ModelFamily, site: &str) -> Option<&SiteScore> {
        self.scores.iter().find(|s| s.family == family && s.site == site)
    }

    pub fn cv_for(&self, kind: ModelKind) -> Option<&LoocvResult> {
        self.cv.iter().find(|c| c.kind == kind)
    }
}

fn site_score(
    family: ModelFamily,
    panel: &Panel,
    site: usize,
    outcome: Result<Vec<Prediction>>,
    report_preds: &mut Vec<LabeledPrediction>,
) -> SiteScore {
    let id = panel.site(site).id.clone();
    match outcome {
        Ok(preds) => {
            let (rows, rmse, ev) = loocv::score(&preds);
            let negatives = negative_count(&preds.iter().map(|p| p.predicted).collect::<Vec<_>>());
            report_preds.extend(preds.into_iter().map(|prediction| LabeledPrediction {
                family,
                stage: "S2",
                site: id.clone(),
                prediction,
            }));
            SiteScore {
                family,
                site: id,
                sample: DaySet::S2,
                rows,
                rmse,
                ev,
                negatives,
                failure: None,
            }
        }
        Err(e) => {
            log::warn!("{family} model at {id} failed: {e}");
            SiteScore {
                family,
                site: id,
                sample: DaySet::S2,
                rows: 0,
                rmse: None,
                ev: None,
                negatives: 0,
                failure: Some(e.to_string()),
            }
        }
    }
}

/// Splits the period, fits every requested family on its learning sample,
/// scores the collocated sensors on the test sample and cross-validates the
/// GWR families.
///
/// Baselines learn on S0; GWR and SGWR learn on S1; everything is scored on
/// S2.
pub fn validate(panel: &Panel, plan: &ValidationPlan) -> Result<EvalReport> {
    let split = split_days(&plan.split)?;
    let s0 = split.hours_in(panel, DaySet::S0);
    let s1 = split.hours_in(panel, DaySet::S1);
    let s2 = split.hours_in(panel, DaySet::S2);
    let collocated = panel.sites_with_role(Role::CollocatedSensor);
    if collocated.is_empty() {
        return Err(Error::InsufficientData("no collocated sensors to score".into()));
    }
    let covs = &plan.covariates;
    let mut report = EvalReport {
        split: SplitSummary::new(&plan.split, &split),
        kernel: plan.kernel,
        pairing: plan.pairing.clone(),
        scores: Vec::new(),
        negatives: Vec::new(),
        cv: Vec::new(),
        hourly: Vec::new(),
        bandwidth: Vec::new(),
        predictions: Vec::new(),
    };

    for &family in &plan.families {
        let outcomes: Vec<Result<Vec<Prediction>>> = match family {
            ModelFamily::Collocated => collocated
                .par_iter()
                .map(|&site| {
                    fit_collocated(panel, site, covs, &s0, &plan.opts)
                        .map(|m| SiteModels::single(m).predict(panel, site, &s2))
                })
                .collect(),
            ModelFamily::NonCollocated => collocated
                .par_iter()
                .map(|&site| {
                    fit_noncollocated(panel, site, &plan.pairing, covs, &s0, &plan.opts)
                        .map(|m| SiteModels::single(m).predict(panel, site, &s2))
                })
                .collect(),
            ModelFamily::Gwr | ModelFamily::Sgwr => {
                let kind = if family == ModelFamily::Gwr { ModelKind::Gwr } else { ModelKind::Sgwr };
                let cal = Calibrator::new(panel, kind, covs, &collocated, &s1, plan.opts)?;
                let sensors: Vec<usize> = panel.sensor_sites().collect();
                let fitted: Vec<(usize, Result<SiteModels>)> = sensors
                    .par_iter()
                    .map(|&site| (site, loocv::site_models(&cal, site, &plan.kernel, &|_| false)))
                    .collect();
                for (site, models) in &fitted {
                    if let Ok(models) = models {
                        let all = models.predict(panel, *site, &|_| true);
                        report.negatives.push(NegativeCount {
                            family,
                            site: panel.site(*site).id.clone(),
                            rows: all.len(),
                            negatives: negative_count(&all.iter().map(|p| p.predicted).collect::<Vec<_>>()),
                        });
                    }
                }
                let cv = loocv_with(&cal, panel, &plan.kernel, &s2)?;
                report.hourly.push((family, rmse_by_hour(&cv.predictions().copied().collect::<Vec<_>>(), &collocated, &|h| panel.hour(h))));
                for f in &cv.folds {
                    report.predictions.extend(f.predictions.iter().map(|p| LabeledPrediction {
                        family,
                        stage: "CV",
                        site: f.site.clone(),
                        prediction: *p,
                    }));
                }
                report.cv.push(cv);
                if let Some(candidates) = &plan.bandwidth_candidates {
                    report.bandwidth.push(bandwidth_search(
                        panel,
                        kind,
                        &plan.kernel,
                        candidates,
                        covs,
                        &s1,
                        &s1,
                        plan.opts,
                    )?);
                }
                fitted
                    .into_iter()
                    .filter(|(site, _)| panel.site(*site).role == Role::CollocatedSensor)
                    .map(|(site, m)| m.map(|m| m.predict(panel, site, &s2)))
                    .collect()
            }
        };
        for (&site, outcome) in collocated.iter().zip(outcomes) {
            let score = site_score(family, panel, site, outcome, &mut report.predictions);
            report.scores.push(score);
        }
    }
    Ok(report)
}
