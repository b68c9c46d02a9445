use rayon::prelude::*;

use super::sgwr::{destandardize_with, standardize, Standardizer};
use super::{CovariateSet, DesignSlice, LocalModel, ModelKind, NormalEquations, WlsOptions, WlsSolution};
use crate::error::{Error, Result};
use crate::geo::Position;
use crate::kernel::{KernelKind, KernelSpec};
use crate::preprocess::Panel;

/// A position at which local coefficients are estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub id: String,
    pub position: Position,
}

impl Target {
    pub fn new(id: impl Into<String>, position: Position) -> Self {
        Self {
            id: id.into(),
            position,
        }
    }

    pub fn from_site(panel: &Panel, site: usize) -> Self {
        let s = panel.site(site);
        Self::new(s.id.clone(), s.position)
    }
}

#[derive(Debug, Clone)]
struct SiteGroup {
    site: usize,
    position: Position,
    total: NormalEquations,
    by_hour: Vec<Option<NormalEquations>>,
}

/// Normal equations of each fitting site, pre-accumulated per site and per
/// site × hour of day.
///
/// Spatial weights are constant across a site's rows, so `X̃ᵀW̃X̃` at any
/// target is `Σ_k w_k X_kᵀX_k`; the spatio-temporal kernel additionally
/// weights each hour-of-day block.
#[derive(Debug, Clone)]
pub struct LocalFitter {
    covariates: CovariateSet,
    groups: Vec<SiteGroup>,
    opts: WlsOptions,
}

impl LocalFitter {
    pub fn new(
        panel: &Panel,
        covariates: &CovariateSet,
        fit_sites: &[usize],
        include_hour: &(dyn Fn(usize) -> bool + Sync),
        opts: WlsOptions,
    ) -> Self {
        let slice = DesignSlice::from_panel(panel, covariates, fit_sites, include_hour);
        Self::from_slice(&slice, &|s| panel.site(s).position, opts)
    }

    pub fn from_slice(slice: &DesignSlice, position: &dyn Fn(usize) -> Position, opts: WlsOptions) -> Self {
        let p = slice.p();
        let mut groups: Vec<SiteGroup> = Vec::new();
        for i in 0..slice.n_rows() {
            let site = slice.site(i);
            let g = match groups.iter().position(|g| g.site == site) {
                Some(k) => &mut groups[k],
                None => {
                    groups.push(SiteGroup {
                        site,
                        position: position(site),
                        total: NormalEquations::new(p),
                        by_hour: vec![None; 24],
                    });
                    groups.last_mut().expect("just pushed")
                }
            };
            let (x, y) = (slice.row(i), slice.response()[i]);
            g.total.add_row(x, y, 1.0);
            g.by_hour[slice.hour_of_day(i) as usize]
                .get_or_insert_with(|| NormalEquations::new(p))
                .add_row(x, y, 1.0);
        }
        groups.sort_by_key(|g| g.site);
        Self {
            covariates: slice.covariates().clone(),
            groups,
            opts,
        }
    }

    pub fn covariates(&self) -> &CovariateSet {
        &self.covariates
    }

    /// Sites contributing rows, ascending.
    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().map(|g| g.site)
    }

    pub fn rows_of(&self, site: usize) -> usize {
        self.groups
            .iter()
            .find(|g| g.site == site)
            .map_or(0, |g| g.total.rows())
    }

    /// Weighted fit at `target`, leaving out every site for which `skip`
    /// returns true. `hour` is the target hour of day for GTWR.
    pub fn fit(
        &self,
        target: Position,
        hour: Option<u32>,
        kernel: &KernelSpec,
        skip: &dyn Fn(usize) -> bool,
    ) -> Result<WlsSolution> {
        kernel.validate()?;
        let mut ne = NormalEquations::new(self.covariates.n_coefficients());
        for g in self.groups.iter().filter(|g| !skip(g.site)) {
            let w = kernel.spatial(target, g.position);
            if w == 0.0 {
                continue;
            }
            match kernel.kind {
                KernelKind::Gaussian => ne.add_scaled(&g.total, w),
                KernelKind::Gtwr => {
                    let h = hour.ok_or_else(|| Error::InvalidInput("GTWR fit needs a target hour".into()))?;
                    for (hod, block) in g.by_hour.iter().enumerate() {
                        if let Some(block) = block {
                            ne.add_scaled(block, w * kernel.temporal(h as f64, hod as f64));
                        }
                    }
                }
            }
        }
        ne.solve(&self.opts)
    }
}

fn hours_for(kernel: &KernelSpec) -> Vec<Option<u32>> {
    match kernel.kind {
        KernelKind::Gaussian => vec![None],
        KernelKind::Gtwr => (0..24).map(Some).collect(),
    }
}

/// GWR models at each target from the complete rows of `fit_sites` in the
/// hours accepted by `include_hour`. The spatio-temporal kernel yields one
/// model per hour of day (24 consecutive entries per target). A singular
/// target does not affect the others.
pub fn fit_gwr(
    panel: &Panel,
    targets: &[Target],
    kernel: &KernelSpec,
    covariates: &CovariateSet,
    fit_sites: &[usize],
    include_hour: &(dyn Fn(usize) -> bool + Sync),
    opts: WlsOptions,
) -> Vec<Result<LocalModel>> {
    let fitter = LocalFitter::new(panel, covariates, fit_sites, include_hour, opts);
    let hours = hours_for(kernel);
    targets
        .par_iter()
        .flat_map_iter(|t| {
            let fitter = &fitter;
            hours.iter().map(move |&h| {
                fitter.fit(t.position, h, kernel, &|_| false).map(|sol| {
                    let mut m = LocalModel::from_solution(
                        t.id.clone(),
                        t.position,
                        super::ModelFamily::Gwr,
                        covariates.clone(),
                        Some(*kernel),
                        sol,
                    );
                    m.hour = h;
                    m
                })
            })
        })
        .collect()
}

/// Fitted state shared by all targets of a GWR or SGWR calibration.
#[derive(Debug, Clone)]
pub struct Calibrator {
    kind: ModelKind,
    fitter: LocalFitter,
    standardizer: Option<Standardizer>,
    site_ids: Vec<String>,
    positions: Vec<Position>,
}

impl Calibrator {
    /// For SGWR every sensor site is standardized with its own statistics over
    /// the hours accepted by `include_hour`.
    pub fn new(
        panel: &Panel,
        kind: ModelKind,
        covariates: &CovariateSet,
        fit_sites: &[usize],
        include_hour: &(dyn Fn(usize) -> bool + Sync),
        opts: WlsOptions,
    ) -> Result<Self> {
        let (fitter, standardizer) = match kind {
            ModelKind::Gwr => (LocalFitter::new(panel, covariates, fit_sites, include_hour, opts), None),
            ModelKind::Sgwr => {
                let (std_panel, std) = standardize(panel, covariates, include_hour)?;
                for &s in fit_sites {
                    std.site_stats(&panel.site(s).id)?;
                }
                (LocalFitter::new(&std_panel, covariates, fit_sites, include_hour, opts), Some(std))
            }
        };
        Ok(Self {
            kind,
            fitter,
            standardizer,
            site_ids: panel.sites().iter().map(|s| s.id.clone()).collect(),
            positions: panel.sites().iter().map(|s| s.position).collect(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn fitter(&self) -> &LocalFitter {
        &self.fitter
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    /// Model at an arbitrary target; standardized-space coefficients for SGWR.
    pub fn model_at(
        &self,
        target: &Target,
        kernel: &KernelSpec,
        hour: Option<u32>,
        skip: &dyn Fn(usize) -> bool,
    ) -> Result<LocalModel> {
        let sol = self.fitter.fit(target.position, hour, kernel, skip)?;
        let mut m = LocalModel::from_solution(
            target.id.clone(),
            target.position,
            self.kind.family(),
            self.fitter.covariates().clone(),
            Some(*kernel),
            sol,
        );
        m.hour = hour;
        Ok(m)
    }

    /// Raw-space model at a sensor site. SGWR coefficients are
    /// de-standardized with that site's own sensor statistics.
    pub fn model_for_site(
        &self,
        site: usize,
        kernel: &KernelSpec,
        hour: Option<u32>,
        skip: &dyn Fn(usize) -> bool,
    ) -> Result<LocalModel> {
        let target = Target::new(self.site_ids[site].clone(), self.positions[site]);
        let m = self.model_at(&target, kernel, hour, skip)?;
        match &self.standardizer {
            None => Ok(m),
            Some(std) => Ok(destandardize_with(&m, &std.site_stats(&self.site_ids[site])?)),
        }
    }
}

/// Raw-space GWR or SGWR models at the given sensor sites (24 per site for
/// the spatio-temporal kernel).
pub fn fit_local_models(
    panel: &Panel,
    kind: ModelKind,
    kernel: &KernelSpec,
    covariates: &CovariateSet,
    fit_sites: &[usize],
    include_hour: &(dyn Fn(usize) -> bool + Sync),
    targets: &[usize],
    opts: WlsOptions,
) -> Result<Vec<Result<LocalModel>>> {
    let cal = Calibrator::new(panel, kind, covariates, fit_sites, include_hour, opts)?;
    let hours = hours_for(kernel);
    Ok(targets
        .par_iter()
        .flat_map_iter(|&site| {
            let cal = &cal;
            hours
                .iter()
                .map(move |&h| cal.model_for_site(site, kernel, h, &|_| false))
        })
        .collect())
}
