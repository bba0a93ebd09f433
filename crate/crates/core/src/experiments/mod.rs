//! Closed-form calculators and Monte Carlo emulations of the four experiments.

use serde::{Deserialize, Serialize};

use crate::decompose::{Probe, ProbeSet, Representation, Target};
use crate::error::{Error, Result};
use crate::fock::FockDim;

pub mod appendix;
pub mod bell;
pub mod g2;
pub mod hom;
pub mod witness;

pub use appendix::{run_appendix_checks, AppendixReport};
pub use bell::{bell_emulation, bell_optimize, BellConfig, BellOptimum, BellProtocol, BellReport};
pub use g2::{g2_scan, g2_true, G2Point};
pub use hom::{hom_click_probability, hom_emulation, HomReport, HomSource};
pub use witness::{classical_limit, four_detector_povm, witness_value, WitnessReport, CONFIDENCE_SIGMAS};

/// Quadrature points for phase averages.
pub const PHASE_POINTS: usize = 256;

/// Threshold detector with efficiency `eta` and dark-count probability `eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub eta: f64,
    pub eps: f64,
}

impl DetectorModel {
    pub fn new(eta: f64, eps: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::domain(format!("eta must be in (0, 1], got {eta}")));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::domain(format!("eps must be in [0, 1), got {eps}")));
        }
        Ok(Self { eta, eps })
    }

    pub fn ideal() -> Self {
        Self { eta: 1.0, eps: 0.0 }
    }
}

/// Trapezoid average of a `2 pi`-periodic function.
pub fn phase_average(f: impl Fn(f64) -> f64) -> f64 {
    let n = PHASE_POINTS;
    (0..n)
        .map(|k| f(2.0 * std::f64::consts::PI * k as f64 / n as f64))
        .sum::<f64>()
        / n as f64
}

/// `(amplitude, coefficient)` pairs of a phase-averaged single-mode representation.
pub fn amplitude_terms(rep: &Representation) -> Result<Vec<(f64, f64)>> {
    if rep.probes().modes() != 1 {
        return Err(Error::domain("expected a single-mode representation"));
    }
    rep.probes()
        .probes()
        .iter()
        .zip(rep.coefficients())
        .map(|(p, &c)| match p {
            Probe::PhaseAveraged { r } => Ok((*r, c)),
            _ => Err(Error::domain("expected phase-averaged probes")),
        })
        .collect()
}

/// `rho_a (x) rho_b` as a two-mode representation with coefficients `c_k c_l`.
pub fn product_representation(a: &Representation, b: &Representation) -> Result<Representation> {
    let ta = amplitude_terms(a)?;
    let tb = amplitude_terms(b)?;
    let (na, nb) = match (a.target(), b.target()) {
        (Target::Fock { n }, Target::Fock { n: m }) => (*n, *m),
        _ => return Err(Error::domain("product representation needs Fock targets")),
    };
    if a.cutoff() != b.cutoff() {
        return Err(Error::domain("representations use different cutoffs"));
    }
    let mut probes = Vec::new();
    let mut coeffs = Vec::new();
    for &(x, cx) in &ta {
        for &(y, cy) in &tb {
            probes.push(Probe::ProductPhaseAveraged { a: x, b: y });
            coeffs.push(cx * cy);
        }
    }
    let sum: f64 = coeffs.iter().sum();
    coeffs.iter_mut().for_each(|c| *c /= sum);
    Representation::from_coefficients(
        ProbeSet::new(probes)?,
        coeffs,
        Target::FockProduct { n: na, m: nb },
        a.cutoff(),
    )
}

/// Default probe grids.
pub mod grids {
    /// Single-photon probes.
    pub const SINGLE_PHOTON: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
    /// Two-photon probes used on their own.
    pub const TWO_PHOTON: (usize, f64) = (7, 1.5);
    /// Two-photon probes used inside NOON compositions.
    pub const TWO_PHOTON_NOON: (usize, f64) = (7, 2.0);
}

/// Single-photon representation over the default grid.
pub fn single_photon_representation(cutoff: FockDim) -> Result<Representation> {
    crate::decompose::solve_representation(
        &Target::Fock { n: 1 },
        &ProbeSet::phase_averaged(&grids::SINGLE_PHOTON)?,
        cutoff,
        1e-12,
    )
}
