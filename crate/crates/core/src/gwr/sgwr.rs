use std::collections::BTreeMap;

use super::{CovariateSet, LocalModel};
use crate::error::{Error, Result};
use crate::ingest::Channel;
use crate::preprocess::Panel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableStats {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
}

/// Per-site, per-covariate mean and standard deviation over the fitting
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    covariates: CovariateSet,
    entries: BTreeMap<(String, Channel), VariableStats>,
}

impl Standardizer {
    pub fn covariates(&self) -> &CovariateSet {
        &self.covariates
    }

    pub fn get(&self, site: &str, channel: Channel) -> Option<VariableStats> {
        self.entries.get(&(site.to_string(), channel)).copied()
    }

    pub fn insert(&mut self, site: &str, channel: Channel, stats: VariableStats) {
        self.entries.insert((site.to_string(), channel), stats);
    }

    pub fn identity(covariates: CovariateSet) -> Self {
        Self {
            covariates,
            entries: BTreeMap::new(),
        }
    }

    pub fn sites(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.entries.keys().map(|(s, _)| s.as_str()).collect();
        s.dedup();
        s
    }

    /// Statistics of one site in covariate order.
    pub fn site_stats(&self, site: &str) -> Result<Vec<VariableStats>> {
        self.covariates
            .channels()
            .iter()
            .map(|c| {
                self.get(site, *c).ok_or_else(|| Error::MissingStandardizer {
                    site: site.to_string(),
                    variable: c.token().to_string(),
                })
            })
            .collect()
    }

    /// Median mean and median standard deviation across `sites`, per
    /// covariate.
    pub fn network_median(&self, sites: &[&str]) -> Result<Vec<VariableStats>> {
        if sites.is_empty() {
            return Err(Error::InsufficientData("no sites for network statistics".into()));
        }
        let per_site: Vec<Vec<VariableStats>> = sites.iter().map(|s| self.site_stats(s)).collect::<Result<_>>()?;
        Ok((0..self.covariates.channels().len())
            .map(|i| VariableStats {
                mean: median(per_site.iter().map(|v| v[i].mean).collect()),
                sd: median(per_site.iter().map(|v| v[i].sd).collect()),
            })
            .collect())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standardizes every covariate of every sensor site with that site's
/// statistics over the hours accepted by `include_hour`. The reference
/// response is left in µg·m⁻³. Sites with fewer than two sample hours get no
/// entry and keep raw values.
pub fn standardize(
    panel: &Panel,
    covariates: &CovariateSet,
    include_hour: &(dyn Fn(usize) -> bool + Sync),
) -> Result<(Panel, Standardizer)> {
    let mut std = Standardizer::identity(covariates.clone());
    for site in panel.sensor_sites() {
        let id = &panel.site(site).id;
        let rows: Vec<Vec<f64>> = panel
            .site_cells(site)
            .filter(|(h, _)| include_hour(*h))
            .filter_map(|(_, c)| covariates.extract(c).ok())
            .collect();
        if rows.len() < 2 {
            continue;
        }
        let n = rows.len() as f64;
        for (i, ch) in covariates.channels().iter().enumerate() {
            let mean = rows.iter().map(|r| r[i]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(f64::MIN_POSITIVE)) || !sd.is_finite() {
                return Err(Error::DegenerateVariable {
                    site: id.clone(),
                    variable: ch.token().to_string(),
                });
            }
            std.insert(id, *ch, VariableStats { mean, sd });
        }
    }
    let ids: Vec<&str> = panel.sites().iter().map(|s| s.id.as_str()).collect();
    let standardized = panel.map_sensor_values(|site, ch, v| match std.get(ids[site], ch) {
        Some(st) => (v - st.mean) / st.sd,
        None => v,
    });
    Ok((standardized, std))
}

/// Converts standardized-space coefficients to raw units with the
/// statistics of `site`:
/// `βᵢ = β̃ᵢ/σᵢ` and `β₀ = β̃₀ − Σ β̃ᵢ μᵢ/σᵢ`.
pub fn destandardize(model: &LocalModel, std: &Standardizer, site: &str) -> Result<LocalModel> {
    if std.covariates() != &model.covariates {
        return Err(Error::InvalidInput("standardizer and model covariates differ".into()));
    }
    Ok(destandardize_with(model, &std.site_stats(site)?))
}

/// [`destandardize`] with explicit statistics in covariate order.
pub fn destandardize_with(model: &LocalModel, stats: &[VariableStats]) -> LocalModel {
    let mut out = model.clone();
    let mut intercept = model.beta[0];
    for (i, st) in stats.iter().enumerate() {
        let b = model.beta[i + 1];
        out.beta[i + 1] = b / st.sd;
        intercept -= b * st.mean / st.sd;
    }
    out.beta[0] = intercept;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Position;
    use crate::gwr::{correct, ModelFamily};
    use crate::preprocess::{Role, SiteRecord, TimedSample, Typology};
    use chrono::{TimeDelta, TimeZone, Utc};

    fn panel(series: &[(&str, Vec<[f64; 5]>)]) -> Panel {
        let sites = series
            .iter()
            .map(|(id, _)| SiteRecord {
                id: id.to_string(),
                position: Position::new(0.0, 0.0),
                role: Role::DeployedSensor,
                typology: Typology::UrbanTraffic,
                reference: None,
            })
            .collect();
        let t0 = Utc.with_ymd_and_hms(2020, 7, 1, 0, 0, 0).unwrap();
        let covs = CovariateSet::gwr5();
        let mut samples = Vec::new();
        for (id, rows) in series {
            for (h, r) in rows.iter().enumerate() {
                let mut s = TimedSample::default();
                for (c, v) in covs.channels().iter().zip(r) {
                    s.set(*c, Some(*v));
                }
                samples.push((id.to_string(), t0 + TimeDelta::hours(h as i64), s));
            }
        }
        Panel::assemble(sites, samples, covs.channels()).unwrap().0
    }

    fn rows(n: usize, shift: f64) -> Vec<[f64; 5]> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                [
                    shift + (t * 0.7).sin() * 10.0,
                    shift + 300.0 + (t * 0.3).cos() * 40.0,
                    60.0 + (t * 1.1).sin() * 9.0,
                    15.0 + t * 0.05,
                    shift + 40.0 + (t * 0.45).cos() * 13.0,
                ]
            })
            .collect()
    }

    #[test]
    fn standardized_moments() {
        let p = panel(&[("A", rows(50, 0.0)), ("B", rows(50, 7.0))]);
        let (sp, std) = standardize(&p, &CovariateSet::gwr5(), &|_| true).unwrap();
        for site in 0..2 {
            let cells: Vec<_> = sp.site_cells(site).map(|(_, c)| c.clone()).collect();
            for ch in CovariateSet::gwr5().channels() {
                let v: Vec<f64> = cells.iter().map(|c| c.get(*ch).unwrap()).collect();
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
            }
        }
        // a constant shift of the raw data leaves standardized values unchanged
        for (a, b) in sp.site_cells(0).zip(sp.site_cells(1)) {
            assert_eq!(a.1.get(Channel::Rh), b.1.get(Channel::Rh));
            for ch in [Channel::No, Channel::Co, Channel::No2] {
                assert!((a.1.get(ch).unwrap() - b.1.get(ch).unwrap()).abs() < 1e-12);
            }
        }
        assert!(std.get("A", Channel::No).is_some());
    }

    #[test]
    fn constant_variable_is_degenerate() {
        let mut r = rows(20, 0.0);
        r.iter_mut().for_each(|row| row[1] = 250.0);
        let p = panel(&[("A", rows(20, 0.0)), ("Z", r)]);
        match standardize(&p, &CovariateSet::gwr5(), &|_| true) {
            Err(Error::DegenerateVariable { site, variable }) => {
                assert_eq!(site, "Z");
                assert_eq!(variable, "co_na");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn model(beta: Vec<f64>) -> LocalModel {
        LocalModel {
            target_id: "A".into(),
            target: Position::new(0.0, 0.0),
            hour: None,
            family: ModelFamily::Sgwr,
            covariates: CovariateSet::gwr5(),
            beta,
            kernel: None,
            condition: 1.0,
            weight_mass: 1.0,
        }
    }

    #[test]
    fn identity_stats_leave_coefficients() {
        let m = model(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let unit = vec![VariableStats { mean: 0.0, sd: 1.0 }; 5];
        assert_eq!(destandardize_with(&m, &unit).beta, m.beta);
    }

    #[test]
    fn hand_computed_destandardization() {
        // only the NO2 coefficient is nonzero: 1 / 2 = 0.5, intercept -1 * 10 / 2 = -5
        let m = model(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let mut stats = vec![VariableStats { mean: 3.0, sd: 4.0 }; 5];
        stats[4] = VariableStats { mean: 10.0, sd: 2.0 };
        let raw = destandardize_with(&m, &stats);
        assert_eq!(raw.beta, vec![-5.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn destandardized_predictions_match() {
        let p = panel(&[("A", rows(40, 0.0))]);
        let (sp, std) = standardize(&p, &CovariateSet::gwr5(), &|_| true).unwrap();
        let m = model(vec![30.0, 1.5, -0.7, 2.2, -3.1, 8.0]);
        let raw = destandardize(&m, &std, "A").unwrap();
        for ((_, c), (_, s)) in p.site_cells(0).zip(sp.site_cells(0)) {
            let a = correct(&raw, c).unwrap();
            let b = correct(&m, s).unwrap();
            assert!((a - b).abs() < 1e-8);
        }
        assert!(matches!(destandardize(&m, &std, "nope"), Err(Error::MissingStandardizer { .. })));
    }
}
