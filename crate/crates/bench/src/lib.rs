//! Fixtures shared by the benchmarks.

use aqgwr::{generate, Panel, Role, SynthSpec};

/// A synthetic city with `stations` collocated pairs and `hours` hours.
pub fn city(stations: usize, hours: usize, seed: u64) -> Panel {
    let spec = SynthSpec {
        stations,
        hours,
        gain_spread: 0.2,
        offset_spread: 0.2,
        ..SynthSpec::default()
    };
    generate(&spec, seed).expect("valid synthetic spec").0
}

pub fn collocated(panel: &Panel) -> Vec<usize> {
    panel.sites_with_role(Role::CollocatedSensor)
}
