//! Spatial and spatio-temporal observation weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{distance_sq, Position};

/// Exponent of the hour-of-day decay in the spatio-temporal kernel.
pub const TIME_EXPONENT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Gtwr,
}

impl KernelKind {
    pub fn token(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Gtwr => "gtwr",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelKind::Gaussian),
            "gtwr" => Ok(KernelKind::Gtwr),
            other => Err(Error::InvalidInput(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Kernel family and bandwidth `B` in meters. `B` is the distance at which
/// the spatial weight equals `exp(-1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
    /// Measure hour differences around the clock (23h and 1h are 2h apart).
    #[serde(default)]
    pub wrap_hours: bool,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Self {
            kind,
            bandwidth,
            wrap_hours: false,
        })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelKind::Gaussian, bandwidth)
    }

    pub fn gtwr(bandwidth: f64) -> Result<Self> {
        Self::new(KernelKind::Gtwr, bandwidth)
    }

    pub fn with_bandwidth(self, bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Self { bandwidth, ..self })
    }

    pub fn validate(&self) -> Result<()> {
        check_bandwidth(self.bandwidth)
    }

    /// `λ` of the `exp(-λ d²)` parametrization.
    pub fn lambda(&self) -> f64 {
        0.5 / (self.bandwidth * self.bandwidth)
    }

    pub(crate) fn spatial(&self, target: Position, site: Position) -> f64 {
        let d2 = distance_sq(target, site);
        (-0.5 * d2 / (self.bandwidth * self.bandwidth)).exp()
    }

    pub(crate) fn temporal(&self, target_hour: f64, obs_hour: f64) -> f64 {
        time_weight(target_hour, obs_hour, self.wrap_hours)
    }

    pub fn is_temporal(&self) -> bool {
        self.kind == KernelKind::Gtwr
    }
}

fn check_bandwidth(b: f64) -> Result<()> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("bandwidth must be positive, got {b}")))
    }
}

fn check_hour(h: f64) -> Result<()> {
    if (0.0..24.0).contains(&h) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("hour of day out of [0, 24): {h}")))
    }
}

/// `exp(-½ ‖s − s_j‖² / B²)`.
pub fn gaussian_weight(s: Position, s_j: Position, bandwidth: f64) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    Ok((-0.5 * distance_sq(s, s_j) / (bandwidth * bandwidth)).exp())
}

/// `1 / (1 + |h − h_t|³)`, optionally with the hour gap taken around the clock.
pub fn time_weight(h: f64, h_t: f64, wrap: bool) -> f64 {
    let mut gap = (h - h_t).abs();
    if wrap {
        gap = gap.min(24.0 - gap);
    }
    1.0 / (1.0 + gap.powi(TIME_EXPONENT))
}

/// Spatial Gaussian weight times the hour-of-day decay.
pub fn gtwr_weight(s: Position, s_j: Position, bandwidth: f64, h: f64, h_t: f64) -> Result<f64> {
    check_hour(h)?;
    check_hour(h_t)?;
    Ok(gaussian_weight(s, s_j, bandwidth)? * time_weight(h, h_t, false))
}

/// One weight per observation row `(position, hour of day)`. Rows of the same
/// site repeat that site's weight. `target_hour` is required for GTWR.
pub fn weight_vector(
    kernel: &KernelSpec,
    target: Position,
    target_hour: Option<f64>,
    rows: &[(Position, f64)],
) -> Result<Vec<f64>> {
    kernel.validate()?;
    match kernel.kind {
        KernelKind::Gaussian => Ok(rows.iter().map(|(p, _)| kernel.spatial(target, *p)).collect()),
        KernelKind::Gtwr => {
            let h = target_hour
                .ok_or_else(|| Error::InvalidInput("GTWR weights need a target hour".into()))?;
            check_hour(h)?;
            rows.iter()
                .map(|(p, ht)| {
                    check_hour(*ht)?;
                    Ok(kernel.spatial(target, *p) * kernel.temporal(h, *ht))
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const O: Position = Position::new(0.0, 0.0);

    #[test]
    fn gaussian_examples() {
        assert_eq!(gaussian_weight(O, O, 100.0).unwrap(), 1.0);
        assert_eq!(gaussian_weight(O, Position::new(100.0, 0.0), 100.0).unwrap(), (-0.5f64).exp());
        let w = gaussian_weight(O, Position::new(0.0, 200.0), 100.0).unwrap();
        assert!((w - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert!(gaussian_weight(O, O, 0.0).is_err());
        assert!(gaussian_weight(O, O, -3.0).is_err());
    }

    #[test]
    fn gtwr_examples() {
        assert_eq!(gtwr_weight(O, O, 500.0, 8.0, 8.0).unwrap(), 1.0);
        assert_eq!(gtwr_weight(O, O, 500.0, 9.0, 8.0).unwrap(), 0.5);
        let w = gtwr_weight(O, Position::new(500.0, 0.0), 500.0, 10.0, 8.0).unwrap();
        assert!((w - (-0.5f64).exp() / 9.0).abs() < 1e-15);
        assert!((w - 0.0674).abs() < 1e-4);
        assert!(gtwr_weight(O, O, 500.0, 24.0, 1.0).is_err());
    }

    #[test]
    fn hour_wrap_is_opt_in() {
        assert_eq!(time_weight(23.0, 1.0, false), 1.0 / (1.0 + 22f64.powi(3)));
        assert_eq!(time_weight(23.0, 1.0, true), 1.0 / 9.0);
        assert_eq!(time_weight(23.0, 0.0, false), 1.0 / (1.0 + 23f64.powi(3)));
        assert_eq!(time_weight(23.0, 0.0, true), 0.5);
    }

    #[test]
    fn weight_vector_repeats_site_weights() {
        let k = KernelSpec::gaussian(1000.0).unwrap();
        let a = Position::new(0.0, 0.0);
        let b = Position::new(800.0, 0.0);
        let w = weight_vector(&k, a, None, &[(a, 0.0), (a, 1.0), (b, 2.0)]).unwrap();
        assert_eq!(w[0], w[1]);
        assert_eq!(w[2], gaussian_weight(a, b, 1000.0).unwrap());
    }

    #[test]
    fn huge_bandwidth_is_uniform() {
        let k = KernelSpec::gaussian(1e9).unwrap();
        let rows: Vec<_> = (0..20).map(|i| (Position::new(1000.0 * i as f64, -700.0 * i as f64), 0.0)).collect();
        let w = weight_vector(&k, O, None, &rows).unwrap();
        assert!(w.iter().all(|w| (w - 1.0).abs() < 1e-6));
    }

    #[test]
    fn small_bandwidth_concentrates_on_coincident_site() {
        let k = KernelSpec::gaussian(200.0).unwrap();
        let near = Position::new(0.0, 0.0);
        let far = Position::new(800.0, 0.0);
        let w = weight_vector(&k, near, None, &[(near, 0.0), (far, 0.0)]).unwrap();
        // exp(8) ≈ 2981
        assert!(w[0] / w[1] > 1e3);
        assert!((w[0] / w[1] - 8f64.exp()).abs() < 1e-9 * 8f64.exp());
    }

    #[test]
    fn gtwr_needs_target_hour() {
        let k = KernelSpec::gtwr(1000.0).unwrap();
        assert!(weight_vector(&k, O, None, &[(O, 0.0)]).is_err());
        assert_eq!(weight_vector(&k, O, Some(3.0), &[(O, 4.0)]).unwrap(), vec![0.5]);
    }

    proptest! {
        #[test]
        fn weights_bounded_and_monotone(d1 in 0.0f64..1e4, d2 in 0.0f64..1e4, b in 10.0f64..1e4, b2 in 10.0f64..1e4) {
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let w_near = gaussian_weight(O, Position::new(near, 0.0), b).unwrap();
            let w_far = gaussian_weight(O, Position::new(far, 0.0), b).unwrap();
            prop_assert!(w_far <= w_near);
            prop_assert!(w_near <= 1.0 && w_far >= 0.0);
            let (small, large) = if b <= b2 { (b, b2) } else { (b2, b) };
            prop_assert!(gaussian_weight(O, Position::new(d1, 0.0), small).unwrap()
                <= gaussian_weight(O, Position::new(d1, 0.0), large).unwrap());
        }

        #[test]
        fn lambda_parametrization(d in 0.0f64..5e3, b in 50.0f64..5e3) {
            let k = KernelSpec::gaussian(b).unwrap();
            let w = gaussian_weight(O, Position::new(d, 0.0), b).unwrap();
            let alt = (-k.lambda() * d * d).exp();
            prop_assert!((w - alt).abs() <= 4.0 * f64::EPSILON);
        }
    }
}
