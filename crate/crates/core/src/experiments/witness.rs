//! Single-photon nonclassicality witness, ideal and with four click detectors.

use serde::{Deserialize, Serialize};

use super::DetectorModel;
use crate::decompose::{approximate_observable, Representation};
use crate::error::{Error, Result};
use crate::fock::{FockDim, Observable};
use crate::optim::golden_max;
use crate::sampler::{emulate_expectation, required_samples, MeasurementModel, SignedMixture, VarianceBreakdown};

/// Diagonal of the ideal witness `-|0><0| + 2|1><1| - |2><2|`.
pub const WITNESS_DIAGONAL: [f64; 3] = [-1.0, 2.0, -1.0];

/// Levels used to fit the four-detector witness; large enough to stand in for the
/// untruncated space.
pub const FIT_LEVELS: usize = 400;

/// Grid searched by [`classical_limit`].
pub const LIMIT_GRID: usize = 1000;

/// `<alpha|W|alpha> = (2a^2 - 1 - a^4/2) e^{-a^2}`.
pub fn witness_value(alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    (2.0 * a2 - 1.0 - 0.5 * a2 * a2) * (-a2).exp()
}

/// Largest value of a coherent-state witness profile on `[0, alpha_max]`.
pub fn classical_limit(f: impl Fn(f64) -> f64, alpha_max: f64) -> Result<(f64, f64)> {
    if !(alpha_max > 0.0) {
        return Err(Error::domain("alpha_max must be positive"));
    }
    let step = alpha_max / (LIMIT_GRID - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..LIMIT_GRID {
        let a = i as f64 * step;
        let v = f(a);
        if !v.is_finite() {
            return Err(Error::Numerical(format!("witness not finite at {a}")));
        }
        if v > best.0 {
            best = (v, a);
        }
    }
    let lo = (best.1 - step).max(0.0);
    let hi = (best.1 + step).min(alpha_max);
    let (x, v) = golden_max(&f, lo, hi, 1e-12);
    Ok(if v >= best.0 { (v, x) } else { best })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weights `w_k` of `p(m|n) = sum_k w_k x_k^n` with `x_k = 1 - (4-k) eta / 4`.
fn povm_terms(m: usize, det: &DetectorModel) -> Vec<(f64, f64)> {
    (0..=m)
        .map(|k| {
            let sign = if (m - k) % 2 == 0 { 1.0 } else { -1.0 };
            // 4! / ((4-m)! k! (m-k)!) = C(4, m) C(m, k)
            let w = sign * binomial(4, m) * binomial(m, k) * (1.0 - det.eps).powi((4 - k) as i32);
            (w, 1.0 - (4 - k) as f64 * det.eta / 4.0)
        })
        .collect()
}

/// Probability of `m` clicks among four detectors fed `n` photons.
pub fn povm_probability(m: usize, n: usize, det: &DetectorModel) -> f64 {
    povm_terms(m, det).iter().map(|(w, x)| w * x.powi(n as i32)).sum()
}

/// `<alpha|Pi_m|alpha>` in closed form.
pub fn povm_coherent(m: usize, alpha: f64, det: &DetectorModel) -> f64 {
    let a2 = alpha * alpha;
    povm_terms(m, det).iter().map(|(w, x)| w * (-a2 * (1.0 - x)).exp()).sum()
}

/// The five click-number elements on `d` levels.
pub fn four_detector_povm(det: &DetectorModel, d: FockDim) -> Result<Vec<Observable>> {
    (0..=4)
        .map(|m| {
            let diag: Vec<f64> = (0..d.get()).map(|n| povm_probability(m, n, det)).collect();
            Observable::diagonal(vec![d.get()], &diag)
        })
        .collect()
}

/// Four-detector approximation `W_4 = sum_m z_m Pi_m` of the ideal witness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedWitness {
    pub detector: DetectorModel,
    pub z: Vec<f64>,
}

impl FittedWitness {
    pub fn fit(det: &DetectorModel) -> Result<Self> {
        let d = FockDim::new(FIT_LEVELS)?;
        let mut w = vec![0.0; FIT_LEVELS];
        w[..3].copy_from_slice(&WITNESS_DIAGONAL);
        let target = Observable::diagonal(vec![FIT_LEVELS], &w)?;
        let z = approximate_observable(&target, &four_detector_povm(det, d)?)?;
        Ok(Self { detector: *det, z })
    }

    /// `<n|W_4|n>`.
    pub fn diagonal(&self, n: usize) -> f64 {
        self.z.iter().enumerate().map(|(m, z)| z * povm_probability(m, n, &self.detector)).sum()
    }

    /// `<alpha|W_4|alpha>`.
    pub fn coherent(&self, alpha: f64) -> f64 {
        self.z.iter().enumerate().map(|(m, z)| z * povm_coherent(m, alpha, &self.detector)).sum()
    }

    /// Outcome variance of `W_4` on `|n>`.
    pub fn variance_on_fock(&self, n: usize) -> f64 {
        let p: Vec<f64> = (0..=4).map(|m| povm_probability(m, n, &self.detector)).collect();
        let mean: f64 = self.z.iter().zip(&p).map(|(z, p)| z * p).sum();
        let second: f64 = self.z.iter().zip(&p).map(|(z, p)| z * z * p).sum();
        second - mean * mean
    }
}

/// Result of a witness study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    /// Classical bound.
    #[serde(rename = "W0")]
    pub w0: f64,
    /// Amplitude attaining the bound.
    pub alpha0: f64,
    /// Witness value on the single-photon state.
    pub target: f64,
    /// Value represented by the probes.
    pub represented: f64,
    pub mean: f64,
    pub std_error: f64,
    pub excess_variance: f64,
    pub delta_ab: f64,
    pub delta_a: f64,
    #[serde(rename = "required_N")]
    pub required_n: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub seed: u64,
    pub variance_empirical: f64,
    /// Largest probe value; stays below `W0`.
    pub max_probe_value: f64,
    /// Fitted POVM weights (four-detector witness only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub z: Option<Vec<f64>>,
    /// Outcome variance on `|1>` (four-detector witness only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub single_photon_variance: Option<f64>,
}

/// Significance used for sample-size estimates.
pub const CONFIDENCE_SIGMAS: f64 = 3.0;

/// Per-probe `Tr(rho_j W)` for a diagonal witness profile over Fock levels.
fn probe_values(rep: &Representation, diag: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
    let mats = rep.probes().densities(rep.cutoff())?;
    Ok(mats
        .iter()
        .map(|m| m.diagonal_values().iter().enumerate().map(|(n, p)| p * diag(n)).sum())
        .collect())
}

/// Each probe contributes its exact witness expectation; the sign ancilla is
/// the only sampled quantity.
fn emulate(
    rep: &Representation,
    values: Vec<f64>,
    n: u64,
    seed: u64,
) -> Result<(crate::sampler::EmulationEstimate, VarianceBreakdown, f64)> {
    let mix = SignedMixture::from_representation(rep);
    let m2: Vec<f64> = values.iter().map(|v| v * v).collect();
    let var = VarianceBreakdown::from_moments(rep.coefficients(), &values, &m2);
    let represented: f64 = rep.coefficients().iter().zip(&values).map(|(c, v)| c * v).sum();
    let meas = MeasurementModel::expectation_valued(values)?;
    Ok((emulate_expectation(&mix, &meas, n, seed)?, var, represented))
}

/// Ideal witness on a single-photon representation.
pub fn run_witness(rep: &Representation, n: u64, seed: u64) -> Result<WitnessReport> {
    let (w0, alpha0) = classical_limit(witness_value, 5.0)?;
    let diag = |k: usize| WITNESS_DIAGONAL.get(k).copied().unwrap_or(0.0);
    let values = probe_values(rep, diag)?;
    let max_probe_value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (est, var, represented) = emulate(rep, values, n, seed)?;
    let target = diag(1);
    Ok(WitnessReport {
        w0,
        alpha0,
        target,
        represented,
        mean: est.mean,
        std_error: est.std_error,
        excess_variance: var.excess,
        delta_ab: var.delta_ab,
        delta_a: var.delta_a,
        required_n: required_samples(var.delta_ab, (target - w0) / 2.0, CONFIDENCE_SIGMAS)?,
        n,
        seed,
        variance_empirical: est.variance_empirical,
        max_probe_value,
        z: None,
        single_photon_variance: None,
    })
}

/// Four-detector witness on a single-photon representation.
pub fn run_witness4(rep: &Representation, det: &DetectorModel, n: u64, seed: u64) -> Result<WitnessReport> {
    let fitted = FittedWitness::fit(det)?;
    let (w0, alpha0) = classical_limit(|a| fitted.coherent(a), 5.0)?;
    let values = probe_values(rep, |k| fitted.diagonal(k))?;
    let max_probe_value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (est, var, represented) = emulate(rep, values, n, seed)?;
    let target = fitted.diagonal(1);
    Ok(WitnessReport {
        w0,
        alpha0,
        target,
        represented,
        mean: est.mean,
        std_error: est.std_error,
        excess_variance: var.excess,
        delta_ab: var.delta_ab,
        delta_a: var.delta_a,
        required_n: required_samples(var.delta_ab, (target - w0) / 2.0, CONFIDENCE_SIGMAS)?,
        n,
        seed,
        variance_empirical: est.variance_empirical,
        max_probe_value,
        single_photon_variance: Some(fitted.variance_on_fock(1)),
        z: Some(fitted.z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn witness_at_zero() {
        assert_eq!(witness_value(0.0), -1.0);
        assert!(witness_value(12.0).abs() < 1e-50 && witness_value(12.0) < 0.0);
    }

    #[test]
    fn constant_profile() {
        let (v, _) = classical_limit(|_| 0.5, 3.0).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn povm_small_cases() {
        let det = DetectorModel::new(0.8, 0.001).unwrap();
        assert!((povm_probability(0, 0, &det) - 0.999f64.powi(4)).abs() < 1e-15);
        let ideal = DetectorModel::ideal();
        assert!((povm_probability(1, 1, &ideal) - 1.0).abs() < 1e-14);
        for m in [0, 2, 3, 4] {
            assert!(povm_probability(m, 1, &ideal).abs() < 1e-14);
        }
    }
}
