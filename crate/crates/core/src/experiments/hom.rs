//! Two-photon interference on a balanced beamsplitter with mode overlap `f`.
//!
//! This model has no dark counts; only the detector efficiency enters.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{phase_average, DetectorModel, CONFIDENCE_SIGMAS};
use crate::decompose::{Probe, Representation};
use crate::error::{Error, Result};
use crate::sampler::{
    required_samples, run_trials, EmulationEstimate, SignedMixture, StreamRng, Trial, VarianceBreakdown,
};

/// What is sent into the two input ports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HomSource {
    /// `|1>|1>`.
    TrueState,
    /// Phase-averaged coherent states of the given amplitudes.
    Pair { a: f64, b: f64 },
}

/// No-click probabilities `(p_+, p_-)` of the two outputs at relative phase `phi`.
fn no_click(a: f64, b: f64, phi: f64, det: &DetectorModel, f: f64) -> (f64, f64) {
    let base = a * a + b * b;
    let cross = 2.0 * f * a * b * phi.cos();
    ((-0.5 * det.eta * (base + cross)).exp(), (-0.5 * det.eta * (base - cross)).exp())
}

/// Probability that both detectors click.
pub fn hom_click_probability(source: HomSource, det: &DetectorModel, f: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::domain(format!("overlap f must be in [0, 1], got {f}")));
    }
    Ok(match source {
        HomSource::TrueState => (1.0 - f * f) * det.eta * det.eta / 2.0,
        HomSource::Pair { a, b } => phase_average(|phi| {
            let (pp, pm) = no_click(a, b, phi, det, f);
            (1.0 - pp) * (1.0 - pm)
        }),
    })
}

fn pairs(rep: &Representation) -> Result<Vec<(f64, f64)>> {
    rep.probes()
        .probes()
        .iter()
        .map(|p| match p {
            Probe::ProductPhaseAveraged { a, b } => Ok((*a, *b)),
            _ => Err(Error::domain("HOM emulation needs product probes")),
        })
        .collect()
}

struct HomTrial<'a> {
    mix: &'a SignedMixture,
    pairs: &'a [(f64, f64)],
    det: DetectorModel,
    f: f64,
}

impl Trial for HomTrial<'_> {
    fn run(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let (j, s) = self.mix.sample(rng);
        let (a, b) = self.pairs[j];
        let phi = 2.0 * PI * rng.random::<f64>();
        let (pp, pm) = no_click(a, b, phi, &self.det, self.f);
        let c1 = rng.random::<f64>() >= pp;
        let c2 = rng.random::<f64>() >= pm;
        out[0] = if c1 && c2 { self.mix.zeta() * s } else { 0.0 };
    }
}

/// Signed Monte Carlo estimate of the coincidence probability.
pub fn hom_emulation(rep: &Representation, det: &DetectorModel, f: f64, n: u64, seed: u64) -> Result<EmulationEstimate> {
    if n == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let pairs = pairs(rep)?;
    let mix = SignedMixture::from_representation(rep);
    let trial = HomTrial { mix: &mix, pairs: &pairs, det: *det, f };
    Ok(run_trials(&trial, n, seed).estimate(0, seed))
}

/// Per-probe coincidence probabilities.
pub fn probe_rates(rep: &Representation, det: &DetectorModel, f: f64) -> Result<Vec<f64>> {
    pairs(rep)?
        .iter()
        .map(|&(a, b)| hom_click_probability(HomSource::Pair { a, b }, det, f))
        .collect()
}

/// Single-trial variance of the coincidence record (a 0/1 event per trial).
pub fn hom_variance(rep: &Representation, det: &DetectorModel, f: f64) -> Result<VarianceBreakdown> {
    let rates = probe_rates(rep, det, f)?;
    Ok(VarianceBreakdown::from_moments(rep.coefficients(), &rates, &rates))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomReport {
    pub p12_true: f64,
    /// Value encoded by the representation.
    pub p12_represented: f64,
    pub mean: f64,
    pub std_error: f64,
    pub variance_predicted: f64,
    pub variance_empirical: f64,
    pub delta_a: f64,
    pub excess_variance: f64,
    #[serde(rename = "required_N")]
    pub required_n: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub seed: u64,
}

pub fn run_hom(rep: &Representation, det: &DetectorModel, f: f64, n: u64, seed: u64) -> Result<HomReport> {
    let p12_true = hom_click_probability(HomSource::TrueState, det, f)?;
    let rates = probe_rates(rep, det, f)?;
    let p12_represented = rep.coefficients().iter().zip(&rates).map(|(c, r)| c * r).sum();
    let var = VarianceBreakdown::from_moments(rep.coefficients(), &rates, &rates);
    let est = hom_emulation(rep, det, f, n, seed)?;
    Ok(HomReport {
        p12_true,
        p12_represented,
        mean: est.mean,
        std_error: est.std_error,
        variance_predicted: var.delta_ab,
        variance_empirical: est.variance_empirical,
        delta_a: var.delta_a,
        excess_variance: var.excess,
        required_n: required_samples(var.delta_ab, p12_represented, CONFIDENCE_SIGMAS)?,
        n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_dip_and_dark_pair() {
        let det = DetectorModel::new(0.8, 0.0).unwrap();
        assert_eq!(hom_click_probability(HomSource::TrueState, &det, 1.0).unwrap(), 0.0);
        assert_eq!(hom_click_probability(HomSource::Pair { a: 0.0, b: 0.0 }, &det, 0.9).unwrap(), 0.0);
        assert!(hom_click_probability(HomSource::TrueState, &det, 1.5).is_err());
    }
}
