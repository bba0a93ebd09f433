//! Numerical checks of the error bound, convergence rate, sampling-noise MSE and
//! the probe-placement residual.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::witness::WITNESS_DIAGONAL;
use crate::decompose::{
    optimality_residual, systematic_error_bound, Probe, ProbeSet, Representation, Target,
};
use crate::error::Result;
use crate::fock::{fidelity, CoherentAmplitude, DensityMatrix, FockDim, Observable, C64};
use crate::sampler::{
    derive_seed, emulate_expectation, sampling_mse, stream_rng, MeasurementModel, SignedMixture, StreamRng,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixConfig {
    pub seed: u64,
    pub bound_trials: usize,
    pub bound_dim: usize,
    pub convergence_sizes: Vec<u64>,
    pub convergence_replicas: usize,
    pub mse_draws: u64,
    pub mse_replicas: usize,
    pub ring: usize,
}

impl Default for AppendixConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            bound_trials: 500,
            bound_dim: 5,
            convergence_sizes: vec![1_000, 10_000, 100_000, 1_000_000],
            convergence_replicas: 50,
            mse_draws: 1000,
            mse_replicas: 500,
            ring: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub trials: usize,
    pub violations: usize,
    /// Largest `|Tr A(rho - sigma)| / (2 M sqrt(1 - F))`.
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCheck {
    pub sizes: Vec<u64>,
    pub rms_error: Vec<f64>,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseCheck {
    pub draws: u64,
    pub replicas: usize,
    /// Phase-averaged single-photon representation, general formula.
    pub mixed_formula: f64,
    pub mixed_empirical: f64,
    /// Coherent-probe representation, pure-probe formula.
    pub pure_formula: f64,
    pub pure_empirical: f64,
    pub pure_zeta: f64,
    /// All-positive coherent mixture.
    pub positive_sign_term: f64,
    pub positive_formula: f64,
    pub positive_empirical: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    pub probes: usize,
    pub max_abs_difference: f64,
    pub max_gradient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub bound: BoundCheck,
    pub convergence: ConvergenceCheck,
    pub mse: MseCheck,
    pub residual: ResidualCheck,
}

fn ginibre(n: usize, rng: &mut StreamRng) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn random_state(n: usize, rng: &mut StreamRng) -> DensityMatrix {
    let g = ginibre(n, rng);
    let m = &g * g.adjoint();
    let tr: f64 = (0..n).map(|i| m[(i, i)].re).sum();
    DensityMatrix::new(vec![n], m / C64::new(tr, 0.0)).expect("Hermitian by construction")
}

pub fn bound_check(trials: usize, dim: usize, seed: u64) -> Result<BoundCheck> {
    let mut rng = stream_rng(seed, 0);
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    for t in 0..trials {
        let rho = random_state(dim, &mut rng);
        let other = random_state(dim, &mut rng);
        // alternate far and nearby pairs so both ends of the bound are exercised
        let mix = if t % 2 == 0 { 1.0 } else { 10f64.powf(-rng.random_range(1.0..6.0)) };
        let mut sigma = rho.clone();
        sigma.add_scaled(mix, &other)?;
        sigma.add_scaled(-mix, &rho)?;
        let g = ginibre(dim, &mut rng);
        let h = DensityMatrix::new(vec![dim], (&g + g.adjoint()) * C64::new(0.5, 0.0))?;
        let m_target: f64 = rng.random_range(0.1..3.0);
        let scale = h.eigenvalues().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let a = Observable::new(vec![dim], h.matrix() * C64::new(m_target / scale, 0.0))?;
        let f = fidelity(&rho, &sigma)?;
        let mut diff = rho.clone();
        diff.add_scaled(-1.0, &sigma)?;
        let delta = crate::fock::expectation(&a, &diff)?.abs();
        let bound = systematic_error_bound(f, a.bound())?;
        if delta > bound + 1e-8 {
            violations += 1;
        }
        if bound > 0.0 {
            max_ratio = max_ratio.max(delta / bound);
        }
    }
    Ok(BoundCheck { trials, violations, max_ratio })
}

/// Slope of `log RMS(<A>_N - <A>)` against `log N` for the witness emulation.
pub fn convergence_check(rep: &Representation, sizes: &[u64], replicas: usize, seed: u64) -> Result<ConvergenceCheck> {
    let mats = rep.probes().densities(rep.cutoff())?;
    let values: Vec<f64> = mats
        .iter()
        .map(|m| m.diagonal_values().iter().zip(WITNESS_DIAGONAL).map(|(p, w)| p * w).sum())
        .collect();
    let exact: f64 = rep.coefficients().iter().zip(&values).map(|(c, v)| c * v).sum();
    let mix = SignedMixture::from_representation(rep);
    let meas = MeasurementModel::expectation_valued(values)?;
    let mut rms = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let mut acc = 0.0;
        for r in 0..replicas {
            let s = derive_seed(derive_seed(seed, i as u64), r as u64);
            let e = emulate_expectation(&mix, &meas, n, s)?.mean - exact;
            acc += e * e;
        }
        rms.push((acc / replicas as f64).sqrt());
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = rms.iter().map(|r| r.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(ConvergenceCheck { sizes: sizes.to_vec(), rms_error: rms, slope: sxy / sxx })
}

/// Mean `Tr (rho_hat - rho)^2` over multinomial resamplings of the mixture.
pub fn empirical_mse(rep: &Representation, draws: u64, replicas: usize, seed: u64) -> Result<f64> {
    let mats = rep.probes().densities(rep.cutoff())?;
    let k = mats.len();
    let gram = DMatrix::from_fn(k, k, |i, j| mats[i].overlap(&mats[j]).expect("same dims"));
    let mix = SignedMixture::from_representation(rep);
    let c = rep.coefficients();
    let mut total = 0.0;
    for r in 0..replicas {
        let mut rng = stream_rng(seed, r as u64);
        let mut counts = vec![0u64; k];
        for _ in 0..draws {
            counts[mix.sample(&mut rng).0] += 1;
        }
        let e: Vec<f64> = (0..k)
            .map(|j| mix.zeta() * mix.signs()[j] * counts[j] as f64 / draws as f64 - c[j])
            .collect();
        let mut q = 0.0;
        for i in 0..k {
            for j in 0..k {
                q += e[i] * gram[(i, j)] * e[j];
            }
        }
        total += q;
    }
    Ok(total / replicas as f64)
}

/// Replaces each phase-averaged probe by `ring` coherent probes spread over the phase.
pub fn ring_representation(rep: &Representation, ring: usize) -> Result<Representation> {
    let mut probes = Vec::new();
    let mut coeffs = Vec::new();
    for (p, &c) in rep.probes().probes().iter().zip(rep.coefficients()) {
        let r = match p {
            Probe::PhaseAveraged { r } => *r,
            _ => return Err(crate::Error::domain("ring construction needs phase-averaged probes")),
        };
        if r == 0.0 {
            probes.push(Probe::Coherent { alpha: CoherentAmplitude::new(0.0, 0.0)? });
            coeffs.push(c);
        } else {
            for k in 0..ring {
                let phase = 2.0 * std::f64::consts::PI * k as f64 / ring as f64;
                probes.push(Probe::Coherent { alpha: CoherentAmplitude::new(r, phase)? });
                coeffs.push(c / ring as f64);
            }
        }
    }
    let sum: f64 = coeffs.iter().sum();
    coeffs.iter_mut().for_each(|x| *x /= sum);
    Representation::from_coefficients(ProbeSet::new(probes)?, coeffs, rep.target().clone(), rep.cutoff())
}

pub fn mse_check(rep: &Representation, draws: u64, replicas: usize, ring: usize, seed: u64) -> Result<MseCheck> {
    let mixed = sampling_mse(rep, draws)?;
    let mixed_empirical = empirical_mse(rep, draws, replicas, derive_seed(seed, 1))?;

    let pure_rep = ring_representation(rep, ring)?;
    let pure = sampling_mse(&pure_rep, draws)?;
    let pure_empirical = empirical_mse(&pure_rep, draws, replicas, derive_seed(seed, 2))?;

    let amps = [(0.3, 0.0), (0.9, 1.3), (1.2, -2.0)];
    let positive = Representation::from_coefficients(
        ProbeSet::coherent(
            &amps.iter().map(|&(r, p)| CoherentAmplitude::new(r, p)).collect::<Result<Vec<_>>>()?,
        )?,
        vec![0.5, 0.3, 0.2],
        rep.target().clone(),
        rep.cutoff(),
    )?;
    let pos = sampling_mse(&positive, draws)?;
    let positive_empirical = empirical_mse(&positive, draws, replicas, derive_seed(seed, 3))?;

    Ok(MseCheck {
        draws,
        replicas,
        mixed_formula: mixed.general,
        mixed_empirical,
        pure_formula: pure.pure()?,
        pure_empirical,
        pure_zeta: pure_rep.zeta(),
        positive_sign_term: pos.sign_term,
        positive_formula: pos.pure()?,
        positive_empirical,
    })
}

fn distance(probes: &[CoherentAmplitude], c: &[f64], target: &Target, d: FockDim) -> Result<f64> {
    let rep = Representation::unevaluated(ProbeSet::coherent(probes)?, c.to_vec(), target.clone(), d)?;
    let mut delta = rep.reconstruct()?;
    delta.add_scaled(-1.0, &target.density(d)?)?;
    Ok(delta.purity())
}

/// Compares the residual with a central-difference gradient of `Tr (rho - rho_true)^2`.
pub fn residual_check(d: FockDim) -> Result<ResidualCheck> {
    let alphas: Vec<CoherentAmplitude> = [(0.3, 0.0), (0.8, 1.0), (1.1, 2.5), (0.5, -0.7)]
        .iter()
        .map(|&(r, p)| CoherentAmplitude::new(r, p))
        .collect::<Result<_>>()?;
    let c = vec![2.0, -1.5, 0.8, -0.3];
    let target = Target::Fock { n: 1 };
    let rep = Representation::unevaluated(ProbeSet::coherent(&alphas)?, c.clone(), target.clone(), d)?;
    let res = optimality_residual(&rep)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut largest: f64 = 0.0;
    for j in 0..alphas.len() {
        let base = alphas[j].value();
        let shifted = |delta: C64| -> Result<f64> {
            let mut a = alphas.clone();
            let v = base + delta;
            a[j] = CoherentAmplitude::new(v.norm(), v.arg())?;
            distance(&a, &c, &target, d)
        };
        let dx = (shifted(C64::new(h, 0.0))? - shifted(C64::new(-h, 0.0))?) / (2.0 * h);
        let dy = (shifted(C64::new(0.0, h))? - shifted(C64::new(0.0, -h))?) / (2.0 * h);
        let predicted = res[j] * (4.0 * c[j]);
        worst = worst.max((predicted - C64::new(dx, dy)).norm());
        largest = largest.max(C64::new(dx, dy).norm());
    }
    Ok(ResidualCheck { probes: alphas.len(), max_abs_difference: worst, max_gradient: largest })
}

pub fn run_appendix_checks(rep: &Representation, cfg: &AppendixConfig) -> Result<AppendixReport> {
    Ok(AppendixReport {
        bound: bound_check(cfg.bound_trials, cfg.bound_dim, derive_seed(cfg.seed, 10))?,
        convergence: convergence_check(
            rep,
            &cfg.convergence_sizes,
            cfg.convergence_replicas,
            derive_seed(cfg.seed, 11),
        )?,
        mse: mse_check(rep, cfg.mse_draws, cfg.mse_replicas, cfg.ring, derive_seed(cfg.seed, 12))?,
        residual: residual_check(rep.cutoff())?,
    })
}
