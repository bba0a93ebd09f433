//! Normalized coincidence rate behind a phase shift, for the two-photon NOON input.
//!
//! In the probe formulas the interference term carries `sqrt(f)`; the closed
//! form uses `f`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{phase_average, DetectorModel};
use crate::decompose::{Probe, Representation};
use crate::error::{Error, Result};
use crate::sampler::{derive_seed, run_trials, SignedMixture, StreamRng, Trial};

/// No-click probabilities `(p_-, p_+)` for probe amplitudes `x`, `y`.
pub fn no_click(x: f64, y: f64, theta: f64, phi: f64, det: &DetectorModel, f: f64) -> (f64, f64) {
    let (c, s) = (theta.cos(), theta.sin());
    let cross = 2.0 * f.sqrt() * x * y * s * phi.sin();
    let p = |sign: f64| {
        let e = x * x * (1.0 + sign * c) + y * y * (1.0 - sign * c) + sign * cross;
        (1.0 - det.eps) * (-0.5 * det.eta * e).exp()
    };
    (p(-1.0), p(1.0))
}

/// `(p_11, p_1., p_.1)` of a product probe.
pub fn probe_rates(x: f64, y: f64, theta: f64, det: &DetectorModel, f: f64) -> [f64; 3] {
    let p11 = phase_average(|phi| {
        let (m, p) = no_click(x, y, theta, phi, det, f);
        (1.0 - m) * (1.0 - p)
    });
    let p10 = phase_average(|phi| 1.0 - no_click(x, y, theta, phi, det, f).0);
    let p01 = phase_average(|phi| 1.0 - no_click(x, y, theta, phi, det, f).1);
    [p11, p10, p01]
}

/// Closed form for the true state.
pub fn g2_true(theta: f64, det: &DetectorModel, f: f64) -> f64 {
    let (eta, eps) = (det.eta, det.eps);
    let z = (1.0 + f) * eta * (2.0 * theta).cos();
    let num = 16.0 * (eta * (1.0 - eps) * (z + eta * (3.0 - f - 4.0 * eps) + 8.0 * eps) + 4.0 * eps * eps);
    let den = eta * (1.0 - eps) * z + eta * (1.0 - eps) * (8.0 - f * eta - eta) + 8.0 * eps;
    num / (den * den)
}

/// Ideal-interference probabilities `(p_2, p_11)` without losses.
pub fn ideal_probabilities(theta: f64, f: f64) -> (f64, f64) {
    let p2 = (1.0 + f) / 4.0 * theta.sin().powi(2);
    let p11 = (1.0 - f) / 2.0 + (1.0 + f) / 2.0 * theta.cos().powi(2);
    (p2, p11)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G2Point {
    pub theta: f64,
    pub g2_true: f64,
    pub g2_emulated: f64,
    /// Delta-method standard error from the sample covariance.
    pub sigma: f64,
    /// The same error predicted from the exact probe rates at the represented point.
    pub sigma_predicted: f64,
    /// Value encoded by the representation.
    pub g2_represented: f64,
    pub p2_ideal: f64,
    pub p11_ideal: f64,
    pub seed: u64,
}

/// Draws a probe and a phase, then records the conditional coincidence and
/// single rates; detector noise is averaged out rather than sampled.
struct G2Trial<'a> {
    mix: &'a SignedMixture,
    pairs: &'a [(f64, f64)],
    theta: f64,
    det: DetectorModel,
    f: f64,
}

impl Trial for G2Trial<'_> {
    fn width(&self) -> usize {
        3
    }

    fn run(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let (j, s) = self.mix.sample(rng);
        let (x, y) = self.pairs[j];
        let phi = 2.0 * PI * rng.random::<f64>();
        let (pm, pp) = no_click(x, y, self.theta, phi, &self.det, self.f);
        let w = self.mix.zeta() * s;
        out[0] = w * (1.0 - pm) * (1.0 - pp);
        out[1] = w * (1.0 - pm);
        out[2] = w * (1.0 - pp);
    }
}

fn pairs(rep: &Representation) -> Result<Vec<(f64, f64)>> {
    rep.probes()
        .probes()
        .iter()
        .map(|p| match p {
            Probe::ProductPhaseAveraged { a, b } => Ok((*a, *b)),
            _ => Err(Error::domain("g2 emulation needs product probes")),
        })
        .collect()
}

/// Emulated `g2` per phase, with a delta-method standard error from the joint
/// estimate of the three rates.
pub fn g2_scan(
    thetas: &[f64],
    rep: &Representation,
    det: &DetectorModel,
    f: f64,
    n: u64,
    seed: u64,
) -> Result<Vec<G2Point>> {
    if thetas.is_empty() {
        return Err(Error::domain("empty phase grid"));
    }
    if n < 2 {
        return Err(Error::domain("need at least two trials per point"));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::domain(format!("overlap f must be in [0, 1], got {f}")));
    }
    let pairs = pairs(rep)?;
    let mix = SignedMixture::from_representation(rep);
    thetas
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let point_seed = derive_seed(seed, i as u64);
            let trial = G2Trial { mix: &mix, pairs: &pairs, theta, det: *det, f };
            let m = run_trials(&trial, n, point_seed);
            let (a, b, c) = (m.mean(0), m.mean(1), m.mean(2));
            let g2 = a / (b * c);
            let sigma = delta_sigma([a, b, c], |r, s| m.covariance(r, s), n);
            let mut rates = [0.0; 3];
            let mut second = [[0.0; 3]; 3];
            for (&(x, y), &cj) in pairs.iter().zip(rep.coefficients()) {
                let r = probe_rates(x, y, theta, det, f);
                for k in 0..3 {
                    rates[k] += cj * r[k];
                }
                let w = mix.zeta() * cj.abs();
                let m2 = conditional_second_moments(x, y, theta, det, f);
                for u in 0..3 {
                    for v in 0..3 {
                        second[u][v] += w * m2[u][v];
                    }
                }
            }
            let sigma_predicted = delta_sigma(rates, |u, v| second[u][v] - rates[u] * rates[v], n);
            let (p2_ideal, p11_ideal) = ideal_probabilities(theta, f);
            Ok(G2Point {
                theta,
                g2_true: g2_true(theta, det, f),
                g2_emulated: g2,
                sigma,
                sigma_predicted,
                g2_represented: rates[0] / (rates[1] * rates[2]),
                p2_ideal,
                p11_ideal,
                seed: point_seed,
            })
        })
        .collect()
}

/// Phase averages of products of the conditional rates `((1-p_-)(1-p_+), 1-p_-, 1-p_+)`.
fn conditional_second_moments(x: f64, y: f64, theta: f64, det: &DetectorModel, f: f64) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for u in 0..3 {
        for v in u..3 {
            let m = phase_average(|phi| {
                let (pm, pp) = no_click(x, y, theta, phi, det, f);
                let r = [(1.0 - pm) * (1.0 - pp), 1.0 - pm, 1.0 - pp];
                r[u] * r[v]
            });
            out[u][v] = m;
            out[v][u] = m;
        }
    }
    out
}

/// Delta-method standard error of `a / (b c)` after `n` trials.
fn delta_sigma(m: [f64; 3], cov: impl Fn(usize, usize) -> f64, n: u64) -> f64 {
    let [a, b, c] = m;
    let grad = [1.0 / (b * c), -a / (b * b * c), -a / (b * c * c)];
    let mut var = 0.0;
    for r in 0..3 {
        for s in 0..3 {
            var += grad[r] * grad[s] * cov(r, s);
        }
    }
    (var / n as f64).sqrt()
}

/// `k` equally spaced phases on `[0, pi)`.
pub fn default_thetas(k: usize) -> Vec<f64> {
    (0..k).map(|i| PI * i as f64 / k as f64).collect()
}
