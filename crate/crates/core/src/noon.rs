//! Beamsplitter algebra on Fock inputs and signed decompositions of NOON states.
//!
//! The beamsplitter with phase `theta` maps input amplitudes `(x, y)` to
//! `((x + y)/sqrt2, e^{i theta}(x - y)/sqrt2)`. On Fock inputs
//! `U|n, m> = sum_j R_{nm}^{(j)} e^{i theta (N - j)} |j, N - j>`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decompose::{representation_fidelity, Probe, ProbeSet, Representation, Target};
use crate::error::{Error, Result};
use crate::fock::{ln_factorial, DensityMatrix, FockDim, C64};
use crate::sampler::SignedMixture;

/// Largest photon number handled by exact rational weights.
pub const MAX_PHOTONS: usize = 60;

/// Amplitude of `|j, N - j>` in the beamsplitter output of `|n, m>`, without the phase.
pub fn r_coefficient(n: usize, m: usize, j: usize) -> Result<f64> {
    let big_n = n + m;
    if j > big_n {
        return Err(Error::domain(format!("j = {j} exceeds n + m = {big_n}")));
    }
    let front = 0.5 * (ln_factorial(n) + ln_factorial(m) + ln_factorial(j) + ln_factorial(big_n - j))
        - 0.5 * big_n as f64 * 2f64.ln();
    let lo = j.saturating_sub(m);
    let hi = n.min(j);
    let mut acc = 0.0;
    for k in lo..=hi {
        let sign = if (m + k - j) % 2 == 0 { 1.0 } else { -1.0 };
        let ln = front
            - ln_factorial(k)
            - ln_factorial(n - k)
            - ln_factorial(j - k)
            - ln_factorial(m + k - j);
        acc += sign * ln.exp();
    }
    Ok(acc)
}

/// `R_{nm}^{(j)}` for `j = 0..=n+m`.
#[derive(Clone, Debug, PartialEq)]
pub struct RCoefficientTable {
    pub n: usize,
    pub m: usize,
    pub values: Vec<f64>,
}

impl RCoefficientTable {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        let values = (0..=n + m).map(|j| r_coefficient(n, m, j)).collect::<Result<_>>()?;
        Ok(Self { n, m, values })
    }
}

/// `R^{(j)}_{a, nt - a}` as a matrix indexed `[j][a]`.
fn r_block(nt: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nt + 1, nt + 1, |j, a| r_coefficient(a, nt - a, j).expect("j <= nt"))
}

/// Adds `scale * U_theta diag(input) U_theta^dag` to `out`.
///
/// `input` holds the two-mode diagonal `p[a * d + b]`. Only photon-number blocks
/// that fit completely in the truncated space (`a + b < d`) are transformed; the
/// rest is dropped.
pub(crate) fn add_split_diagonal(out: &mut DMatrix<C64>, input: &[f64], theta: f64, d: FockDim, scale: f64) {
    let d = d.get();
    for nt in 0..d {
        let w: Vec<f64> = (0..=nt).map(|a| input[a * d + (nt - a)]).collect();
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let r = r_block(nt);
        for j in 0..=nt {
            for l in 0..=nt {
                let s: f64 = (0..=nt).map(|a| w[a] * r[(j, a)] * r[(l, a)]).sum();
                if s != 0.0 {
                    let phase = C64::from_polar(scale * s, theta * (l as f64 - j as f64));
                    out[(j * d + nt - j, l * d + nt - l)] += phase;
                }
            }
        }
    }
}

/// Output of `|n, m>` through the beamsplitter with phase `theta`.
pub fn beamsplitter_state(n: usize, m: usize, theta: f64, d: FockDim) -> Result<DensityMatrix> {
    let big_n = n + m;
    if big_n >= d.get() {
        return Err(Error::CutoffTooSmall { dim: d.get(), tail: 1.0 });
    }
    let dd = d.get();
    let mut psi = DVector::zeros(dd * dd);
    for j in 0..=big_n {
        psi[j * dd + big_n - j] = C64::from_polar(r_coefficient(n, m, j)?, theta * (big_n - j) as f64);
    }
    Ok(DensityMatrix::from_vector(vec![dd, dd], &psi))
}

/// Beamsplitter unitary restricted to the complete photon-number blocks.
pub fn beamsplitter_unitary(theta: f64, d: FockDim) -> DMatrix<C64> {
    let dd = d.get();
    let mut u = DMatrix::zeros(dd * dd, dd * dd);
    for nt in 0..dd {
        let r = r_block(nt);
        for j in 0..=nt {
            for a in 0..=nt {
                u[(j * dd + nt - j, a * dd + nt - a)] =
                    C64::from_polar(r[(j, a)], theta * (nt - j) as f64);
            }
        }
    }
    u
}

/// `(|N,0> - |0,N>)/sqrt(2)`.
pub fn noon_state(n_photons: usize, d: FockDim) -> Result<DensityMatrix> {
    let dd = d.get();
    if n_photons == 0 || n_photons >= dd {
        return Err(Error::domain(format!("NOON state with N = {n_photons} at cutoff {dd}")));
    }
    let mut psi = DVector::zeros(dd * dd);
    psi[n_photons * dd] = C64::new(1.0, 0.0);
    psi[n_photons] = C64::new(-1.0, 0.0);
    Ok(DensityMatrix::from_vector(vec![dd, dd], &psi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsTerm {
    pub weight: f64,
    /// Exact weight as a reduced fraction.
    pub weight_exact: String,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTerm {
    pub weight: f64,
    pub weight_exact: String,
    /// Photons in mode a; mode b holds `N - j`.
    pub j: usize,
}

/// `|Psi_N><Psi_N| = sum_k w_k rho(n, m, theta_k) + sum_j w_j |j><j| (x) |N-j><N-j|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoonDecomposition {
    pub photons: usize,
    pub split: (usize, usize),
    pub theta0: f64,
    pub bs_terms: Vec<BsTerm>,
    pub correction_terms: Vec<CorrectionTerm>,
}

fn binomial(n: usize, k: usize) -> i128 {
    let mut c: i128 = 1;
    for i in 0..k {
        c = c * (n - i) as i128 / (i + 1) as i128;
    }
    c
}

fn fraction(r: Ratio<i128>) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn to_f64(r: Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Phase-averaging decomposition of the `N`-photon NOON state.
///
/// Even `N` uses the balanced split with `N/2` phases; odd `N` uses
/// `(ceil(N/2), floor(N/2))` with `N` phases.
pub fn noon_decomposition(n_photons: usize) -> Result<NoonDecomposition> {
    if n_photons == 0 || n_photons > MAX_PHOTONS {
        return Err(Error::domain(format!("N must be in 1..={MAX_PHOTONS}, got {n_photons}")));
    }
    let big_n = n_photons;
    let even = big_n % 2 == 0;
    let n = big_n.div_ceil(2);
    let m = big_n / 2;
    let theta0 = if m % 2 == 0 { PI / big_n as f64 } else { 0.0 };
    // n! m! 2^{N-1} / N!
    let scale = Ratio::new(1i128 << (big_n - 1), binomial(big_n, n));
    let (phases, each) = if even {
        (big_n / 2, scale * Ratio::new(2, big_n as i128))
    } else {
        (big_n, scale * Ratio::new(1, big_n as i128))
    };
    let bs_terms = (0..phases)
        .map(|k| BsTerm {
            weight: to_f64(each),
            weight_exact: fraction(each),
            theta: theta0 + 2.0 * PI * k as f64 / big_n as f64,
        })
        .collect();

    let mut correction_terms = Vec::new();
    for j in 1..big_n {
        if even && j % 2 == 1 {
            continue;
        }
        // R^(j) = T sqrt(j!(N-j)!/(n!m!)) 2^{-N/2} with integer T
        let lo = j.saturating_sub(m);
        let hi = n.min(j);
        let t: i128 = (lo..=hi)
            .map(|k| {
                let s = if (m + k - j) % 2 == 0 { 1 } else { -1 };
                s * binomial(n, k) * binomial(m, j - k)
            })
            .sum();
        if t == 0 {
            continue;
        }
        let w = -Ratio::new(t * t, 2 * binomial(big_n, j));
        correction_terms.push(CorrectionTerm { weight: to_f64(w), weight_exact: fraction(w), j });
    }
    Ok(NoonDecomposition { photons: big_n, split: (n, m), theta0, bs_terms, correction_terms })
}

impl NoonDecomposition {
    /// Sum of all weights; one for a valid decomposition.
    pub fn total_weight(&self) -> f64 {
        self.bs_terms.iter().map(|t| t.weight).sum::<f64>()
            + self.correction_terms.iter().map(|t| t.weight).sum::<f64>()
    }

    /// Dense operator built from exact Fock inputs.
    pub fn reconstruct(&self, d: FockDim) -> Result<DensityMatrix> {
        let (n, m) = self.split;
        let dd = d.get();
        let mut acc = DensityMatrix::zeros(vec![dd, dd]);
        for t in &self.bs_terms {
            acc.add_scaled(t.weight, &beamsplitter_state(n, m, t.theta, d)?)?;
        }
        for t in &self.correction_terms {
            let mut p = vec![0.0; dd * dd];
            p[t.j * dd + self.photons - t.j] = 1.0;
            acc.add_scaled(t.weight, &DensityMatrix::diagonal(vec![dd, dd], &p)?)?;
        }
        Ok(acc)
    }
}

fn phase_averaged_terms(rep: &Representation) -> Result<Vec<(f64, f64)>> {
    rep.probes()
        .probes()
        .iter()
        .zip(rep.coefficients())
        .map(|(p, &c)| match p {
            Probe::PhaseAveraged { r } => Ok((*r, c)),
            _ => Err(Error::domain("Fock representations must use phase-averaged probes")),
        })
        .collect()
}

/// Replaces every Fock input of the decomposition by its classical representation.
///
/// The vacuum is exact (a single zero-amplitude probe) and is supplied when absent.
pub fn compose_with_fock_representations(
    dec: &NoonDecomposition,
    fock_reps: &BTreeMap<usize, Representation>,
) -> Result<Representation> {
    let mut cutoff: Option<FockDim> = None;
    let mut lookup = |k: usize| -> Result<Vec<(f64, f64)>> {
        match fock_reps.get(&k) {
            Some(rep) => {
                if rep.target() != &(Target::Fock { n: k }) {
                    return Err(Error::domain(format!("representation for |{k}> has another target")));
                }
                match cutoff {
                    None => cutoff = Some(rep.cutoff()),
                    Some(c) if c != rep.cutoff() => {
                        return Err(Error::domain("Fock representations use different cutoffs"))
                    }
                    _ => {}
                }
                phase_averaged_terms(rep)
            }
            None if k == 0 => Ok(vec![(0.0, 1.0)]),
            None => Err(Error::MissingFockRepresentation(k)),
        }
    };

    let (n, m) = dec.split;
    let big_n = dec.photons;
    let rep_n = lookup(n)?;
    let rep_m = lookup(m)?;
    let mut probes = Vec::new();
    let mut coeffs = Vec::new();
    for t in &dec.bs_terms {
        for &(a, ca) in &rep_n {
            for &(b, cb) in &rep_m {
                probes.push(Probe::SplitPhaseAveraged { a, b, theta: t.theta });
                coeffs.push(t.weight * ca * cb);
            }
        }
    }
    for t in &dec.correction_terms {
        let ra = lookup(t.j)?;
        let rb = lookup(big_n - t.j)?;
        for &(a, ca) in &ra {
            for &(b, cb) in &rb {
                probes.push(Probe::ProductPhaseAveraged { a, b });
                coeffs.push(t.weight * ca * cb);
            }
        }
    }
    let cutoff = cutoff.ok_or_else(|| Error::domain("no Fock representation supplied"))?;
    if big_n >= cutoff.get() {
        return Err(Error::CutoffTooSmall { dim: cutoff.get(), tail: 1.0 });
    }
    // exact weights sum to one; absorb rounding so the invariant holds tightly
    let sum: f64 = coeffs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Numerical(format!("composed coefficients sum to {sum}")));
    }
    let target = Target::Noon { n: big_n };
    let rep = Representation::assemble(ProbeSet::new(probes)?, coeffs, target.clone(), cutoff, f64::NAN)?;
    let rho = rep.reconstruct()?;
    let f = representation_fidelity(&target.density(cutoff)?, &rho)?;
    let rep = Representation::assemble(
        rep.probes().clone(),
        rep.coefficients().to_vec(),
        target,
        cutoff,
        f,
    )?;
    Ok(rep.with_noon(dec.clone()))
}

/// One two-mode coherent probe drawn from a composed representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoModeProbe {
    pub index: usize,
    pub sign: f64,
    /// Input magnitudes.
    pub amplitudes: (f64, f64),
    pub phi1: f64,
    pub phi2: f64,
    /// Beamsplitter phase; `None` for product probes.
    pub theta: Option<f64>,
    pub out_a: C64,
    pub out_b: C64,
}

/// Draws two-mode probes with probability proportional to `|c_j|`.
#[derive(Clone, Debug)]
pub struct TwoModeSampler {
    mix: SignedMixture,
    probes: Vec<Probe>,
}

impl TwoModeSampler {
    pub fn new(rep: &Representation) -> Result<Self> {
        for p in rep.probes().probes() {
            if !matches!(p, Probe::SplitPhaseAveraged { .. } | Probe::ProductPhaseAveraged { .. }) {
                return Err(Error::domain("two-mode sampling needs phase-averaged two-mode probes"));
            }
        }
        Ok(Self { mix: SignedMixture::from_representation(rep), probes: rep.probes().probes().to_vec() })
    }

    pub fn mixture(&self) -> &SignedMixture {
        &self.mix
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TwoModeProbe {
        let (index, sign) = self.mix.sample(rng);
        let phi1 = 2.0 * PI * rng.random::<f64>();
        let phi2 = 2.0 * PI * rng.random::<f64>();
        sample_from(&self.probes[index], index, sign, phi1, phi2)
    }
}

fn sample_from(p: &Probe, index: usize, sign: f64, phi1: f64, phi2: f64) -> TwoModeProbe {
    match *p {
        Probe::SplitPhaseAveraged { a, b, theta } => {
            let (x, y) = split_outputs(a, b, phi1, phi2, theta);
            TwoModeProbe { index, sign, amplitudes: (a, b), phi1, phi2, theta: Some(theta), out_a: x, out_b: y }
        }
        Probe::ProductPhaseAveraged { a, b } => TwoModeProbe {
            index,
            sign,
            amplitudes: (a, b),
            phi1,
            phi2,
            theta: None,
            out_a: C64::from_polar(a, phi1),
            out_b: C64::from_polar(b, phi2),
        },
        _ => unreachable!("checked in TwoModeSampler::new"),
    }
}

/// Output amplitudes for inputs `a e^{i phi1}`, `b e^{i phi2}`.
pub fn split_outputs(a: f64, b: f64, phi1: f64, phi2: f64, theta: f64) -> (C64, C64) {
    let x = C64::from_polar(a, phi1);
    let y = C64::from_polar(b, phi2);
    ((x + y) / SQRT_2, C64::from_polar(1.0, theta) * (x - y) / SQRT_2)
}

/// Draws one probe from a composed representation (convenience wrapper).
pub fn sample_two_mode_probe<R: Rng + ?Sized>(sampler: &TwoModeSampler, rng: &mut R) -> TwoModeProbe {
    sampler.sample(rng)
}
