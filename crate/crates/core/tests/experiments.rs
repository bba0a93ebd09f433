use std::f64::consts::PI;

use approx::assert_relative_eq;
use cse_lab::decompose::{ProbeSet, Representation, Target};
use cse_lab::experiments::bell::{self, j0, q_elements};
use cse_lab::experiments::g2::{g2_true, ideal_probabilities};
use cse_lab::experiments::witness::{povm_coherent, povm_probability, run_witness, run_witness4};
use cse_lab::experiments::{
    classical_limit, four_detector_povm, hom_click_probability, single_photon_representation, witness_value,
    BellConfig, BellProtocol, DetectorModel, HomSource,
};
use cse_lab::fock::{FockDim, C64};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn d(n: usize) -> FockDim {
    FockDim::new(n).unwrap()
}

fn poisson(lam: f64, n: usize) -> f64 {
    (-lam + n as f64 * lam.ln() - (1..=n).map(|k| (k as f64).ln()).sum::<f64>()).exp()
}

/// Click-number distribution by following each photon: it is lost or lands on
/// one of four detectors; unlit detectors then fire with the dark-count probability.
fn click_distribution(n: usize, eta: f64, eps: f64) -> [f64; 5] {
    let mut lit = [0.0f64; 16];
    lit[0] = 1.0;
    for _ in 0..n {
        let mut next = [0.0; 16];
        for (mask, &p) in lit.iter().enumerate() {
            next[mask] += p * (1.0 - eta);
            for det in 0..4 {
                next[mask | (1 << det)] += p * eta / 4.0;
            }
        }
        lit = next;
    }
    let mut out = [0.0; 5];
    for (mask, &p) in lit.iter().enumerate() {
        let hit = (mask as u32).count_ones() as usize;
        let dark = 4 - hit;
        for extra in 0..=dark {
            let ways = (0..extra).fold(1.0, |a, i| a * (dark - i) as f64 / (i + 1) as f64);
            out[hit + extra] += p * ways * eps.powi(extra as i32) * (1.0 - eps).powi((dark - extra) as i32);
        }
    }
    out
}

#[test]
fn povm_matches_photon_bookkeeping() {
    for (eta, eps) in [(1.0, 0.0), (0.8, 0.001), (0.35, 0.05)] {
        let det = DetectorModel::new(eta, eps).unwrap();
        for n in 0..12 {
            let oracle = click_distribution(n, eta, eps);
            for m in 0..=4 {
                assert!((povm_probability(m, n, &det) - oracle[m]).abs() < 1e-12, "m={m} n={n}");
            }
        }
    }
}

#[test]
fn coherent_povm_is_poisson_average() {
    let det = DetectorModel::new(0.8, 0.001).unwrap();
    for alpha in [0.3, 1.0, 1.7] {
        for m in 0..=4 {
            let sum: f64 = (0..80).map(|n| poisson(alpha * alpha, n) * povm_probability(m, n, &det)).sum();
            assert_relative_eq!(povm_coherent(m, alpha, &det), sum, epsilon = 1e-12);
        }
    }
}

#[test]
fn witness_classical_bound() {
    for alpha in [0.2, 0.9, 1.4] {
        let direct: f64 =
            poisson(alpha * alpha, 0) * -1.0 + poisson(alpha * alpha, 1) * 2.0 - poisson(alpha * alpha, 2);
        assert_relative_eq!(witness_value(alpha), direct, epsilon = 1e-14);
    }
    let (w0, a0) = classical_limit(witness_value, 5.0).unwrap();
    // stationary point of (2x - 1 - x^2/2) e^{-x} with x = a^2
    let x: f64 = 3.0 - 3f64.sqrt();
    assert_relative_eq!(a0, x.sqrt(), epsilon = 1e-6);
    assert_relative_eq!(w0, (2.0 * x - 1.0 - 0.5 * x * x) * (-x).exp(), epsilon = 1e-12);
}

#[test]
fn probes_never_exceed_classical_bound() {
    let rep = single_photon_representation(d(30)).unwrap();
    let w = run_witness(&rep, 1000, 1).unwrap();
    assert!(w.max_probe_value <= w.w0 + 1e-9);
    let w4 = run_witness4(&rep, &DetectorModel::new(0.8, 0.001).unwrap(), 1000, 1).unwrap();
    assert!(w4.max_probe_value <= w4.w0 + 1e-9);
    assert!(w4.target > w4.w0);
}

#[test]
fn hom_closed_forms() {
    let det = DetectorModel::new(0.8, 0.0).unwrap();
    let p = hom_click_probability(HomSource::TrueState, &det, 0.95f64.sqrt()).unwrap();
    assert_relative_eq!(p, 0.05 * 0.64 / 2.0, epsilon = 1e-15);
    // without overlap the outputs are independent
    let (a, b) = (0.7, 0.4);
    let single = 1.0 - (-0.5 * det.eta * (a * a + b * b)).exp();
    let q = hom_click_probability(HomSource::Pair { a, b }, &det, 0.0).unwrap();
    assert_relative_eq!(q, single * single, epsilon = 1e-14);
    assert!(hom_click_probability(HomSource::TrueState, &det, 1.2).is_err());
}

#[test]
fn g2_closed_form_extremes() {
    assert_eq!(ideal_probabilities(0.0, 1.0), (0.0, 1.0));
    let (p2, p11) = ideal_probabilities(PI / 2.0, 1.0);
    assert_relative_eq!(p2, 0.5, epsilon = 1e-15);
    assert!(p11.abs() < 1e-15);
    let ideal = DetectorModel::ideal();
    assert_relative_eq!(g2_true(0.0, &ideal, 1.0), 1.0, epsilon = 1e-14);
    assert!(g2_true(PI / 2.0, &ideal, 1.0).abs() < 1e-14);
    let det = DetectorModel::new(0.8, 0.001).unwrap();
    let vals: Vec<f64> = (0..=200).map(|i| g2_true(PI * i as f64 / 200.0, &det, 0.95)).collect();
    let max = vals.iter().copied().fold(f64::MIN, f64::max);
    let min = vals.iter().copied().fold(f64::MAX, f64::min);
    assert_eq!(max, vals[0]);
    assert_eq!(min, vals[100]);
}

/// Truncated `exp(nu a^dag - nu a)`.
fn displacement(nu: f64, dim: usize) -> DMatrix<C64> {
    let gen = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j + 1 {
            C64::new(nu * (i as f64).sqrt(), 0.0)
        } else if j == i + 1 {
            C64::new(-nu * (j as f64).sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    gen.exp()
}

/// `D(nu) (1-eta)^n D(nu)^dag`.
fn no_click_operator(nu: f64, eta: f64, dim: usize) -> DMatrix<C64> {
    let dn = displacement(nu, dim);
    let loss = DMatrix::from_fn(dim, dim, |i, j| if i == j { C64::new((1.0 - eta).powi(i as i32), 0.0) } else { C64::new(0.0, 0.0) });
    &dn * loss * dn.adjoint()
}

fn shared_photon(dim: usize) -> DVector<C64> {
    let mut psi = DVector::zeros(dim * dim);
    psi[dim] = C64::new(0.5f64.sqrt(), 0.0);
    psi[1] = C64::new(-(0.5f64.sqrt()), 0.0);
    psi
}

fn j0_oracle(mu1: f64, mu2: f64, eta: f64) -> f64 {
    let dim = 40;
    let psi = shared_photon(dim);
    let id = DMatrix::<C64>::identity(dim, dim);
    let q = |nu: f64| no_click_operator(nu, eta, dim);
    let ev = |op: DMatrix<C64>| (psi.adjoint() * op * &psi)[(0, 0)].re;
    let joint = |a: f64, b: f64| ev(q(a).kronecker(&q(b)));
    joint(-mu2, mu2) - joint(mu1, -mu1) - (ev(q(-mu2).kronecker(&id)) - joint(-mu2, -mu1))
        - (ev(id.kronecker(&q(mu2))) - joint(mu1, mu2))
}

#[test]
fn bell_matches_displaced_detector_oracle() {
    for (mu, eta) in [(0.4, 1.0), (0.9, 0.9), (0.0, 0.7)] {
        let q = no_click_operator(mu, eta, 40);
        let (a00, a01, a11) = q_elements(mu, eta);
        assert_relative_eq!(q[(0, 0)].re, a00, epsilon = 1e-12);
        assert_relative_eq!(q[(0, 1)].re, a01, epsilon = 1e-12);
        assert_relative_eq!(q[(1, 1)].re, a11, epsilon = 1e-12);
    }
    for (m1, m2, eta) in [(0.563, 0.165, 1.0), (0.587, 0.177, 0.95), (0.3, 0.8, 0.9)] {
        assert_relative_eq!(j0(m1, m2, eta), j0_oracle(m1, m2, eta), epsilon = 1e-10);
    }
    assert!(j0(0.563, 0.165, 1.0) < -1.0);
}

fn single_probe(r: f64) -> Representation {
    Representation::from_coefficients(ProbeSet::phase_averaged(&[r]).unwrap(), vec![1.0], Target::Fock { n: 0 }, d(40))
        .unwrap()
}

#[test]
fn vacuum_probe_is_deterministic() {
    let (m1, m2) = (0.55, 0.2);
    let det = DetectorModel::new(0.9, 0.0).unwrap();
    let cfg = BellConfig::new(m1, m2, det, single_probe(0.0)).unwrap();
    let est = bell::bell_emulation(&cfg, BellProtocol::Analytic, 1000, 3).unwrap();
    let q = |nu: f64| (-0.9 * nu * nu).exp();
    let expect = q(m2) * q(m2) - q(m1) * q(m1) - q(m2) * (1.0 - q(m1)) - (1.0 - q(m1)) * q(m2);
    assert_relative_eq!(est.mean, expect, epsilon = 1e-12);
    assert!(est.std_error < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn povm_is_complete(eta in 0.05f64..1.0, eps in 0.0f64..0.1) {
        let det = DetectorModel::new(eta, eps).unwrap();
        let povm = four_detector_povm(&det, d(40)).unwrap();
        for n in 0..40 {
            let total: f64 = povm.iter().map(|p| p.matrix()[(n, n)].re).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            for p in &povm {
                let x = p.matrix()[(n, n)].re;
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&x));
            }
        }
    }

    #[test]
    fn classical_probes_obey_local_bound(
        r in 0.0f64..2.0,
        m1 in 0.01f64..1.5,
        m2 in 0.01f64..1.5,
        eta in 0.5f64..1.0,
    ) {
        let cfg = BellConfig::new(m1, m2, DetectorModel::new(eta, 0.0).unwrap(), single_probe(r)).unwrap();
        let (j, _) = bell::bell_prediction(&cfg, BellProtocol::Analytic).unwrap();
        prop_assert!((-1.0 - 1e-12..=1e-12).contains(&j), "{}", j);
    }
}
