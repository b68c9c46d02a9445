//! Local weighted least squares estimation.
//!
//! At a target position `s` the coefficient vector minimizes
//! `Σ_k Σ_i w(s − s_k) (Y_i(s_k) − x_i(s_k)ᵀβ)²` over every hourly row of
//! every fitting site, which gives `β̂(s) = (X̃ᵀW̃X̃)⁻¹ X̃ᵀW̃Ỹ`. The normal
//! matrix is solved by Cholesky factorization after diagonal equilibration.

mod engine;
mod io;
mod sgwr;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Position;
use crate::ingest::Channel;
use crate::kernel::KernelSpec;
use crate::linalg::solve_spd;
use crate::preprocess::{Panel, TimedSample};

pub use engine::{fit_gwr, fit_local_models, Calibrator, LocalFitter, Target};
pub use io::{read_models, write_models};
pub use sgwr::{destandardize, destandardize_with, standardize, Standardizer, VariableStats};

/// Condition estimate above which the normal matrix counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Ordered model covariates. The intercept is implicit and always first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Channel>", into = "Vec<Channel>")]
pub struct CovariateSet(Vec<Channel>);

impl CovariateSet {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidInput("covariate list is empty".into()));
        }
        if channels.contains(&Channel::RefNo2) {
            return Err(Error::InvalidInput("the reference channel cannot be a covariate".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::InvalidInput(format!("covariate `{c}` listed twice")));
            }
        }
        Ok(Self(channels))
    }

    /// NO, CO, relative humidity, temperature, then the NO₂ signal being
    /// corrected.
    pub fn gwr5() -> Self {
        Self(vec![Channel::No, Channel::Co, Channel::Rh, Channel::Temp, Channel::No2])
    }

    pub fn channels(&self) -> &[Channel] {
        &self.0
    }

    /// Number of coefficients, intercept included.
    pub fn n_coefficients(&self) -> usize {
        self.0.len() + 1
    }

    pub fn labels(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.0.iter().map(|c| c.token().to_string()))
            .collect()
    }

    /// Covariate values of a sample in model order.
    pub fn extract(&self, sample: &TimedSample) -> Result<Vec<f64>> {
        self.0
            .iter()
            .map(|c| sample.get(*c).ok_or_else(|| Error::MissingCovariate(c.token().into())))
            .collect()
    }
}

impl Default for CovariateSet {
    fn default() -> Self {
        Self::gwr5()
    }
}

impl TryFrom<Vec<Channel>> for CovariateSet {
    type Error = Error;
    fn try_from(v: Vec<Channel>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CovariateSet> for Vec<Channel> {
    fn from(c: CovariateSet) -> Self {
        c.0
    }
}

/// Response vector and design matrix (intercept column first) of the rows
/// used in one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSlice {
    covariates: CovariateSet,
    x: Vec<f64>,
    y: Vec<f64>,
    site: Vec<usize>,
    hour: Vec<usize>,
    hour_of_day: Vec<u32>,
}

impl DesignSlice {
    /// Complete rows (reference and every covariate present) of the given
    /// sites for the hours accepted by `include_hour`, in site then hour order.
    pub fn from_panel(
        panel: &Panel,
        covariates: &CovariateSet,
        sites: &[usize],
        include_hour: &(dyn Fn(usize) -> bool + Sync),
    ) -> Self {
        let mut slice = Self::empty(covariates.clone());
        for &s in sites {
            for (h, cell) in panel.site_cells(s) {
                if !include_hour(h) {
                    continue;
                }
                let (Some(y), Ok(xs)) = (cell.reference, covariates.extract(cell)) else {
                    continue;
                };
                slice.push(&xs, y, s, h, panel.hour_of_day(h));
            }
        }
        slice
    }

    /// Builds a slice from covariate rows (without the intercept column).
    pub fn from_rows(covariates: CovariateSet, rows: &[(Vec<f64>, f64)], site: &[usize]) -> Result<Self> {
        if rows.len() != site.len() {
            return Err(Error::InvalidInput("one site index per row is required".into()));
        }
        let mut slice = Self::empty(covariates);
        for (i, (xs, y)) in rows.iter().enumerate() {
            if xs.len() + 1 != slice.p() {
                return Err(Error::InvalidInput(format!("row {i} has {} covariates", xs.len())));
            }
            slice.push(xs, *y, site[i], i, 0);
        }
        Ok(slice)
    }

    fn empty(covariates: CovariateSet) -> Self {
        Self {
            covariates,
            x: Vec::new(),
            y: Vec::new(),
            site: Vec::new(),
            hour: Vec::new(),
            hour_of_day: Vec::new(),
        }
    }

    fn push(&mut self, xs: &[f64], y: f64, site: usize, hour: usize, hod: u32) {
        self.x.push(1.0);
        self.x.extend_from_slice(xs);
        self.y.push(y);
        self.site.push(site);
        self.hour.push(hour);
        self.hour_of_day.push(hod);
    }

    pub fn covariates(&self) -> &CovariateSet {
        &self.covariates
    }

    pub fn p(&self) -> usize {
        self.covariates.n_coefficients()
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Design row `i`, intercept included.
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn site(&self, i: usize) -> usize {
        self.site[i]
    }

    pub fn hour(&self, i: usize) -> usize {
        self.hour[i]
    }

    pub fn hour_of_day(&self, i: usize) -> u32 {
        self.hour_of_day[i]
    }

    /// `(Ỹ − X̃β)ᵀ W̃ (Ỹ − X̃β)`.
    pub fn objective(&self, beta: &[f64], weights: &[f64]) -> f64 {
        (0..self.n_rows())
            .map(|i| {
                let r = self.y[i] - dot(self.row(i), beta);
                weights[i] * r * r
            })
            .sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsOptions {
    pub max_condition: f64,
    /// Adds `1e-8 · trace / p` to the diagonal of the normal matrix.
    pub jitter: bool,
}

impl Default for WlsOptions {
    fn default() -> Self {
        Self {
            max_condition: MAX_CONDITION,
            jitter: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    pub beta: Vec<f64>,
    pub condition: f64,
    /// Sum of the row weights.
    pub weight_mass: f64,
    pub rows: usize,
}

/// Accumulated `X̃ᵀW̃X̃` and `X̃ᵀW̃Ỹ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    p: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    mass: f64,
    rows: usize,
}

impl NormalEquations {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            xtx: vec![0.0; p * p],
            xty: vec![0.0; p],
            mass: 0.0,
            rows: 0,
        }
    }

    pub fn add_row(&mut self, x: &[f64], y: f64, w: f64) {
        let p = self.p;
        for i in 0..p {
            let wxi = w * x[i];
            self.xty[i] += wxi * y;
            for j in 0..=i {
                self.xtx[i * p + j] += wxi * x[j];
            }
        }
        self.mass += w;
        self.rows += 1;
    }

    /// Adds `w ·` another accumulation.
    pub fn add_scaled(&mut self, other: &NormalEquations, w: f64) {
        for (a, b) in self.xtx.iter_mut().zip(&other.xtx) {
            *a += w * b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += w * b;
        }
        self.mass += w * other.mass;
        self.rows += other.rows;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn solve(&self, opts: &WlsOptions) -> Result<WlsSolution> {
        let p = self.p;
        if self.rows < p {
            return Err(Error::InsufficientData(format!("{} rows for {p} coefficients", self.rows)));
        }
        let mut a = self.xtx.clone();
        for i in 0..p {
            for j in (i + 1)..p {
                a[i * p + j] = a[j * p + i];
            }
        }
        if opts.jitter {
            let jitter = 1e-8 * (0..p).map(|i| a[i * p + i]).sum::<f64>() / p as f64;
            for i in 0..p {
                a[i * p + i] += jitter;
            }
        }
        let sol = solve_spd(&a, &self.xty, p, opts.max_condition)?;
        Ok(WlsSolution {
            beta: sol.x,
            condition: sol.condition,
            weight_mass: self.mass,
            rows: self.rows,
        })
    }
}

/// Weighted least squares on all rows of `slice`.
pub fn fit_wls(slice: &DesignSlice, weights: &[f64], opts: &WlsOptions) -> Result<WlsSolution> {
    if weights.len() != slice.n_rows() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} rows",
            weights.len(),
            slice.n_rows()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput(format!("weights must be positive, got {w}")));
    }
    let mut ne = NormalEquations::new(slice.p());
    for (i, &w) in weights.iter().enumerate() {
        ne.add_row(slice.row(i), slice.y[i], w);
    }
    ne.solve(opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Collocated,
    NonCollocated,
    Gwr,
    Sgwr,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Collocated,
        ModelFamily::NonCollocated,
        ModelFamily::Gwr,
        ModelFamily::Sgwr,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ModelFamily::Collocated => "c",
            ModelFamily::NonCollocated => "nc",
            ModelFamily::Gwr => "gwr",
            ModelFamily::Sgwr => "sgwr",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.token() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model family `{s}`")))
    }
}

/// Spatially varying estimator flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gwr,
    Sgwr,
}

impl ModelKind {
    pub fn family(self) -> ModelFamily {
        match self {
            ModelKind::Gwr => ModelFamily::Gwr,
            ModelKind::Sgwr => ModelFamily::Sgwr,
        }
    }
}

/// Coefficients of a calibration model at one position, in raw units
/// (µg·m⁻³ per covariate unit) unless produced in standardized space.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub target_id: String,
    pub target: Position,
    /// Hour of day the model applies to (spatio-temporal kernel only).
    pub hour: Option<u32>,
    pub family: ModelFamily,
    pub covariates: CovariateSet,
    pub beta: Vec<f64>,
    /// `None` for the kernel-free baselines.
    pub kernel: Option<KernelSpec>,
    pub condition: f64,
    pub weight_mass: f64,
}

impl LocalModel {
    pub fn from_solution(
        target_id: impl Into<String>,
        target: Position,
        family: ModelFamily,
        covariates: CovariateSet,
        kernel: Option<KernelSpec>,
        sol: WlsSolution,
    ) -> Self {
        Self {
            target_id: target_id.into(),
            target,
            hour: None,
            family,
            covariates,
            beta: sol.beta,
            kernel,
            condition: sol.condition,
            weight_mass: sol.weight_mass,
        }
    }

    /// `β₀ + Σ βᵢ xᵢ` for covariates in model order.
    pub fn predict(&self, covariates: &[f64]) -> f64 {
        self.beta[0] + dot(&self.beta[1..], covariates)
    }
}

/// Corrected concentration for one sample. Negative values are returned
/// unchanged.
pub fn correct(model: &LocalModel, sample: &TimedSample) -> Result<f64> {
    Ok(model.predict(&model.covariates.extract(sample)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle_ols;

    fn design(rows: usize, seed: u64) -> (DesignSlice, Vec<f64>) {
        // deterministic pseudo-random covariates
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let mut data = Vec::new();
        let mut sites = Vec::new();
        for i in 0..rows {
            let xs: Vec<f64> = (0..5).map(|k| 10.0 * (k + 1) as f64 * next() + 5.0).collect();
            data.push((xs, 30.0 + 8.0 * next()));
            sites.push(i % 3);
        }
        let slice = DesignSlice::from_rows(CovariateSet::gwr5(), &data, &sites).unwrap();
        let weights = (0..rows).map(|_| 0.1 + next().abs()).collect();
        (slice, weights)
    }

    #[test]
    fn uniform_weights_give_ols() {
        let (slice, _) = design(80, 1);
        let sol = fit_wls(&slice, &vec![1.0; 80], &WlsOptions::default()).unwrap();
        let ols = oracle_ols(&slice).unwrap();
        for (a, b) in sol.beta.iter().zip(&ols) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(sol.weight_mass, 80.0);
    }

    #[test]
    fn exact_recovery() {
        let truth = [1.0, 2.0, 0.0, -1.0, 0.5, 3.0];
        let (slice, weights) = design(40, 2);
        let rows: Vec<_> = (0..40)
            .map(|i| (slice.row(i)[1..].to_vec(), dot(slice.row(i), &truth)))
            .collect();
        let exact = DesignSlice::from_rows(CovariateSet::gwr5(), &rows, &vec![0; 40]).unwrap();
        let sol = fit_wls(&exact, &weights, &WlsOptions::default()).unwrap();
        for (a, b) in sol.beta.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn scale_equivariance_and_orthogonality() {
        let (slice, weights) = design(60, 3);
        let opts = WlsOptions::default();
        let base = fit_wls(&slice, &weights, &opts).unwrap();
        let scaled: Vec<f64> = weights.iter().map(|w| w * 37.5).collect();
        let other = fit_wls(&slice, &scaled, &opts).unwrap();
        for (a, b) in base.beta.iter().zip(&other.beta) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let p = slice.p();
        let mut grad = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for i in 0..slice.n_rows() {
            let r = slice.y[i] - dot(slice.row(i), &base.beta);
            for j in 0..p {
                grad[j] += weights[i] * slice.row(i)[j] * r;
                scale[j] += weights[i] * slice.row(i)[j] * slice.y[i];
            }
        }
        let norm = scale.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(grad.iter().all(|g| g.abs() <= 1e-8 * norm));
    }

    #[test]
    fn objective_is_minimal() {
        let (slice, weights) = design(50, 4);
        let sol = fit_wls(&slice, &weights, &WlsOptions::default()).unwrap();
        let g0 = slice.objective(&sol.beta, &weights);
        let mut state = 99u64;
        for _ in 0..100 {
            let delta: Vec<f64> = (0..slice.p())
                .map(|_| {
                    state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            let moved: Vec<f64> = sol.beta.iter().zip(&delta).map(|(b, d)| b + 1e-3 * d / norm).collect();
            assert!(g0 <= slice.objective(&moved, &weights));
        }
    }

    #[test]
    fn rejects_bad_weights_and_rank_deficiency() {
        let (slice, mut weights) = design(20, 5);
        weights[3] = 0.0;
        assert!(matches!(fit_wls(&slice, &weights, &WlsOptions::default()), Err(Error::InvalidInput(_))));
        let rows: Vec<_> = (0..20).map(|i| (vec![i as f64, 2.0 * i as f64, 1.0, 2.0, 3.0], 1.0)).collect();
        let collinear = DesignSlice::from_rows(CovariateSet::gwr5(), &rows, &vec![0; 20]).unwrap();
        match fit_wls(&collinear, &vec![1.0; 20], &WlsOptions::default()) {
            Err(Error::SingularFit { condition }) => assert!(condition > MAX_CONDITION),
            other => panic!("expected singular fit, got {other:?}"),
        }
        let short: Vec<_> = (0..3).map(|i| (vec![i as f64; 5], 1.0)).collect();
        let tiny = DesignSlice::from_rows(CovariateSet::gwr5(), &short, &[0, 0, 0]).unwrap();
        assert!(matches!(fit_wls(&tiny, &[1.0; 3], &WlsOptions::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn jitter_regularizes() {
        let rows: Vec<_> = (0..20).map(|i| (vec![i as f64, 2.0 * i as f64, 1.0, (i * i) as f64, 3.0 + i as f64], 1.0)).collect();
        let slice = DesignSlice::from_rows(CovariateSet::gwr5(), &rows, &vec![0; 20]).unwrap();
        let opts = WlsOptions { jitter: true, ..Default::default() };
        assert!(fit_wls(&slice, &vec![1.0; 20], &opts).is_ok());
    }

    #[test]
    fn correction() {
        let mut model = LocalModel {
            target_id: "A".into(),
            target: Position::new(0.0, 0.0),
            hour: None,
            family: ModelFamily::Collocated,
            covariates: CovariateSet::gwr5(),
            beta: vec![20.63, 0.0, 0.0, 0.0, 0.0, 0.0],
            kernel: None,
            condition: 1.0,
            weight_mass: 1.0,
        };
        let mut sample = TimedSample::default();
        for (i, c) in CovariateSet::gwr5().channels().iter().enumerate() {
            sample.set(*c, Some(10.0 * i as f64 - 7.0));
        }
        assert_eq!(correct(&model, &sample).unwrap(), 20.63);
        model.beta = vec![0.0, 1.0, -1.0, 0.5, 0.25, 2.0];
        let zero = TimedSample { values: [Some(0.0); 6], reference: None };
        model.beta[0] = 0.0;
        assert_eq!(correct(&model, &zero).unwrap(), 0.0);
        sample.set(Channel::Co, None);
        assert!(matches!(correct(&model, &sample), Err(Error::MissingCovariate(c)) if c == "co_na"));
    }
}
