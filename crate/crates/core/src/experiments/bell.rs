//! Clauser-Horne test with displaced on/off detection on a single photon shared by
//! two modes, `(|1,0> - |0,1>)/sqrt(2)`.
//!
//! `Q(mu)` is the no-click operator after displacing by `-mu`. With settings
//! `mu_1`, `mu_2` the combination is
//! `J = Q_a(-mu_2)Q_b(mu_2) - Q_a(mu_1)Q_b(-mu_1) - Q_a(-mu_2)[1 - Q_b(-mu_1)] - [1 - Q_a(mu_1)]Q_b(mu_2)`
//! and local models obey `-1 <= <J> <= 0`.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{amplitude_terms, phase_average, DetectorModel, CONFIDENCE_SIGMAS};
use crate::decompose::Representation;
use crate::error::{Error, Result};
use crate::optim::nelder_mead;
use crate::sampler::{
    required_samples, run_trials, EmulationEstimate, SignedMixture, StreamRng, Trial, VarianceBreakdown,
};

/// `(<0|Q|0>, <0|Q|1>, <1|Q|1>)` for real `mu`.
pub fn q_elements(mu: f64, eta: f64) -> (f64, f64, f64) {
    let e = (-eta * mu * mu).exp();
    (e, e * eta * mu, e * ((1.0 - eta) + eta * eta * mu * mu))
}

/// `<Q_a(mu) Q_b(nu)>` on the shared single photon.
pub fn joint_no_click(mu: f64, nu: f64, eta: f64) -> f64 {
    let (a00, a01, a11) = q_elements(mu, eta);
    let (b00, b01, b11) = q_elements(nu, eta);
    0.5 * (a11 * b00 + a00 * b11 - 2.0 * a01 * b01)
}

/// `<Q(mu)>` on either mode alone.
pub fn single_no_click(mu: f64, eta: f64) -> f64 {
    let (a00, _, a11) = q_elements(mu, eta);
    0.5 * (a00 + a11)
}

/// `<J>` for the exact state.
pub fn j0(mu1: f64, mu2: f64, eta: f64) -> f64 {
    joint_no_click(mu1, mu2, eta) - joint_no_click(mu1, -mu1, eta) + joint_no_click(-mu2, mu2, eta)
        + joint_no_click(-mu2, -mu1, eta)
        - single_no_click(-mu2, eta)
        - single_no_click(mu2, eta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellOptimum {
    pub j0: f64,
    pub mu1: f64,
    pub mu2: f64,
}

const GRID: usize = 20;

/// Minimizes `<J>` over the settings: best point of a 20 x 20 grid on
/// `[0.05, 1]^2`, refined by Nelder-Mead.
pub fn bell_optimize(det: &DetectorModel) -> Result<BellOptimum> {
    let eta = det.eta;
    let f = |v: &[f64]| j0(v[0], v[1], eta);
    let axis = |i: usize| 0.05 + 0.95 * i as f64 / (GRID - 1) as f64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..GRID {
        for k in 0..GRID {
            let v = f(&[axis(i), axis(k)]);
            if v < best.0 {
                best = (v, axis(i), axis(k));
            }
        }
    }
    let (x, v) = nelder_mead(f, &[best.1, best.2], 0.05, 1e-10, 5000);
    if !v.is_finite() || x[0] <= 0.0 || x[1] <= 0.0 {
        return Err(Error::NoConvergence { iterations: 5000 });
    }
    Ok(BellOptimum { j0: v, mu1: x[0], mu2: x[1] })
}

/// How a trial is recorded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BellProtocol {
    /// Each trial measures all four setting pairs, each on its own probe copy,
    /// and records the 0/1 coincidence events.
    SettingClicks,
    /// Each trial draws one probe and phase and records the exact conditional `J`.
    Analytic,
}

/// Settings plus the single-photon representation that feeds the split probes.
#[derive(Clone, Debug)]
pub struct BellConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub detector: DetectorModel,
    pub rep: Representation,
}

impl BellConfig {
    pub fn new(mu1: f64, mu2: f64, detector: DetectorModel, rep: Representation) -> Result<Self> {
        if !(mu1 > 0.0 && mu2 > 0.0) {
            return Err(Error::domain("displacements must be positive"));
        }
        amplitude_terms(&rep)?;
        Ok(Self { mu1, mu2, detector, rep })
    }

    /// The four coincidence terms `(sign, a setting, a clicks, b setting, b clicks)`.
    fn terms(&self) -> [Term; 4] {
        let (m1, m2) = (self.mu1, self.mu2);
        [
            Term { sign: 1.0, a: -m2, a_click: false, b: m2, b_click: false },
            Term { sign: -1.0, a: m1, a_click: false, b: -m1, b_click: false },
            Term { sign: -1.0, a: -m2, a_click: false, b: -m1, b_click: true },
            Term { sign: -1.0, a: m1, a_click: true, b: m2, b_click: false },
        ]
    }
}

#[derive(Clone, Copy, Debug)]
struct Term {
    sign: f64,
    a: f64,
    a_click: bool,
    b: f64,
    b_click: bool,
}

/// No-click probability of mode a (`+x`) or b (`-x`) for split amplitude `x = r e^{i phi}/sqrt2`.
fn q(r: f64, phi: f64, mode_b: bool, nu: f64, eta: f64) -> f64 {
    let s = if mode_b { -1.0 } else { 1.0 };
    let re = s * r * phi.cos() / SQRT_2 - nu;
    let im = s * r * phi.sin() / SQRT_2;
    (-eta * (re * re + im * im)).exp()
}

impl Term {
    fn probability(&self, r: f64, phi: f64, eta: f64) -> f64 {
        let qa = q(r, phi, false, self.a, eta);
        let qb = q(r, phi, true, self.b, eta);
        let pa = if self.a_click { 1.0 - qa } else { qa };
        let pb = if self.b_click { 1.0 - qb } else { qb };
        pa * pb
    }
}

fn conditional_j(terms: &[Term; 4], r: f64, phi: f64, eta: f64) -> f64 {
    terms.iter().map(|t| t.sign * t.probability(r, phi, eta)).sum()
}

struct ClickTrial<'a> {
    mix: &'a SignedMixture,
    amps: &'a [f64],
    terms: [Term; 4],
    eta: f64,
}

impl Trial for ClickTrial<'_> {
    fn run(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let mut acc = 0.0;
        for t in &self.terms {
            let (j, s) = self.mix.sample(rng);
            let r = self.amps[j];
            let phi = 2.0 * PI * rng.random::<f64>();
            let qa = q(r, phi, false, t.a, self.eta);
            let qb = q(r, phi, true, t.b, self.eta);
            let a_fired = rng.random::<f64>() >= qa;
            let b_fired = rng.random::<f64>() >= qb;
            if a_fired == t.a_click && b_fired == t.b_click {
                acc += t.sign * s;
            }
        }
        out[0] = self.mix.zeta() * acc;
    }
}

struct AnalyticTrial<'a> {
    mix: &'a SignedMixture,
    amps: &'a [f64],
    terms: [Term; 4],
    eta: f64,
}

impl Trial for AnalyticTrial<'_> {
    fn run(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let (j, s) = self.mix.sample(rng);
        let phi = 2.0 * PI * rng.random::<f64>();
        out[0] = self.mix.zeta() * s * conditional_j(&self.terms, self.amps[j], phi, self.eta);
    }
}

/// Signed Monte Carlo estimate of `<J>`.
pub fn bell_emulation(cfg: &BellConfig, protocol: BellProtocol, n: u64, seed: u64) -> Result<EmulationEstimate> {
    if n == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let amps: Vec<f64> = amplitude_terms(&cfg.rep)?.iter().map(|t| t.0).collect();
    let mix = SignedMixture::from_representation(&cfg.rep);
    let eta = cfg.detector.eta;
    let terms = cfg.terms();
    let m = match protocol {
        BellProtocol::SettingClicks => run_trials(&ClickTrial { mix: &mix, amps: &amps, terms, eta }, n, seed),
        BellProtocol::Analytic => run_trials(&AnalyticTrial { mix: &mix, amps: &amps, terms, eta }, n, seed),
    };
    Ok(m.estimate(0, seed))
}

/// Represented `<J>` and the predicted single-trial variance of a protocol.
pub fn bell_prediction(cfg: &BellConfig, protocol: BellProtocol) -> Result<(f64, VarianceBreakdown)> {
    let tv = amplitude_terms(&cfg.rep)?;
    let c: Vec<f64> = tv.iter().map(|t| t.1).collect();
    let eta = cfg.detector.eta;
    let terms = cfg.terms();
    let mean: f64 = tv
        .iter()
        .map(|&(r, cj)| cj * phase_average(|phi| conditional_j(&terms, r, phi, eta)))
        .sum();
    let var = match protocol {
        BellProtocol::Analytic => {
            let m1: Vec<f64> = tv.iter().map(|&(r, _)| phase_average(|p| conditional_j(&terms, r, p, eta))).collect();
            let m2: Vec<f64> = tv
                .iter()
                .map(|&(r, _)| phase_average(|p| conditional_j(&terms, r, p, eta).powi(2)))
                .collect();
            VarianceBreakdown::from_moments(&c, &m1, &m2)
        }
        BellProtocol::SettingClicks => {
            let mut total = VarianceBreakdown { delta_ab: 0.0, delta_a: 0.0, excess: 0.0 };
            for t in &terms {
                let p: Vec<f64> = tv.iter().map(|&(r, _)| phase_average(|phi| t.probability(r, phi, eta))).collect();
                let v = VarianceBreakdown::from_moments(&c, &p, &p);
                total.delta_ab += v.delta_ab;
                total.delta_a += v.delta_a;
                total.excess += v.excess;
            }
            total
        }
    };
    Ok((mean, var))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellReport {
    pub eta: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// `<J>` of the exact state at these settings.
    pub j0_exact: f64,
    pub j0_represented: f64,
    pub protocol: BellProtocol,
    pub mean: f64,
    pub std_error: f64,
    pub variance_predicted: f64,
    pub variance_predicted_analytic: f64,
    pub variance_empirical: f64,
    pub excess_variance: f64,
    /// Trials to separate the represented value from the local bound -1.
    #[serde(rename = "required_N")]
    pub required_n: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub seed: u64,
}

pub fn run_bell(cfg: &BellConfig, protocol: BellProtocol, n: u64, seed: u64) -> Result<BellReport> {
    let (represented, var) = bell_prediction(cfg, protocol)?;
    let (_, analytic) = bell_prediction(cfg, BellProtocol::Analytic)?;
    let est = bell_emulation(cfg, protocol, n, seed)?;
    let margin = (-1.0 - represented).abs().max(f64::MIN_POSITIVE);
    Ok(BellReport {
        eta: cfg.detector.eta,
        mu1: cfg.mu1,
        mu2: cfg.mu2,
        j0_exact: j0(cfg.mu1, cfg.mu2, cfg.detector.eta),
        j0_represented: represented,
        protocol,
        mean: est.mean,
        std_error: est.std_error,
        variance_predicted: var.delta_ab,
        variance_predicted_analytic: analytic.delta_ab,
        variance_empirical: est.variance_empirical,
        excess_variance: var.excess,
        required_n: required_samples(var.delta_ab, margin, CONFIDENCE_SIGMAS)?,
        n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_displacement_ideal_detector() {
        // Q(0) on one photon with eta = 1 is the vacuum projector
        let (a00, a01, a11) = q_elements(0.0, 1.0);
        assert_eq!((a00, a01, a11), (1.0, 0.0, 0.0));
        assert_eq!(single_no_click(0.0, 1.0), 0.5);
    }
}
