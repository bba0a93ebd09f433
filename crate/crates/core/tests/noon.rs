use std::collections::BTreeMap;
use std::f64::consts::PI;

use approx::assert_relative_eq;
use cse_lab::decompose::{solve_representation, ProbeSet, Representation, Target};
use cse_lab::experiments::grids;
use cse_lab::fock::{DensityMatrix, FockDim, C64};
use cse_lab::noon::{
    beamsplitter_state, compose_with_fock_representations, noon_decomposition, noon_state, r_coefficient,
    RCoefficientTable, TwoModeSampler,
};
use cse_lab::sampler::stream_rng;
use nalgebra::DVector;

fn d(n: usize) -> FockDim {
    FockDim::new(n).unwrap()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binom(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn max_diff(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    (a.matrix() - b.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `(a+ + e^{i theta} b+)^n (a+ - e^{i theta} b+)^m |0,0> / sqrt(n! m! 2^N)`, expanded directly.
fn creation_operator_state(n: usize, m: usize, theta: f64, dim: usize) -> DensityMatrix {
    let big_n = n + m;
    let mut psi = DVector::<C64>::zeros(dim * dim);
    let e = C64::from_polar(1.0, theta);
    for k in 0..=n {
        for l in 0..=m {
            let j = k + l;
            let sign = if (m - l) % 2 == 0 { 1.0 } else { -1.0 };
            let coef = e.powu((big_n - j) as u32) * (sign * binom(n, k) * binom(m, l));
            psi[j * dim + big_n - j] += coef * (factorial(j) * factorial(big_n - j)).sqrt();
        }
    }
    psi /= C64::new((factorial(n) * factorial(m) * 2f64.powi(big_n as i32)).sqrt(), 0.0);
    DensityMatrix::from_vector(vec![dim, dim], &psi)
}

fn noon_oracle(big_n: usize, dim: usize) -> DensityMatrix {
    let mut psi = DVector::<C64>::zeros(dim * dim);
    psi[big_n * dim] = C64::new(0.5f64.sqrt(), 0.0);
    psi[big_n] = C64::new(-(0.5f64.sqrt()), 0.0);
    DensityMatrix::from_vector(vec![dim, dim], &psi)
}

/// Uniform-phase form with `N` phases and `(ceil(N/2), floor(N/2))` inputs, built from scratch.
fn all_phase_form(big_n: usize, dim: usize) -> DensityMatrix {
    let n = big_n.div_ceil(2);
    let m = big_n / 2;
    let theta0 = if m % 2 == 0 { PI / big_n as f64 } else { 0.0 };
    let scale = 2f64.powi(big_n as i32 - 1) * factorial(n) * factorial(m) / factorial(big_n);
    let mut acc = DensityMatrix::zeros(vec![dim, dim]);
    for k in 0..big_n {
        let theta = theta0 + 2.0 * PI * k as f64 / big_n as f64;
        acc.add_scaled(scale / big_n as f64, &creation_operator_state(n, m, theta, dim)).unwrap();
    }
    for j in 1..big_n {
        let r = r_coefficient(n, m, j).unwrap();
        let mut p = vec![0.0; dim * dim];
        p[j * dim + big_n - j] = 1.0;
        acc.add_scaled(-scale * r * r, &DensityMatrix::diagonal(vec![dim, dim], &p).unwrap()).unwrap();
    }
    acc
}

#[test]
fn r_coefficients_are_unitary() {
    for total in 0..=8 {
        for n in 0..=total {
            let m = total - n;
            let t = RCoefficientTable::new(n, m).unwrap();
            assert_relative_eq!(t.values.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-12);
            for n2 in 0..=total {
                if n2 == n {
                    continue;
                }
                let u = RCoefficientTable::new(n2, total - n2).unwrap();
                let dot: f64 = t.values.iter().zip(&u.values).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-12);
            }
        }
    }
}

#[test]
fn beamsplitter_matches_creation_operators() {
    for (n, m) in [(1, 0), (0, 1), (1, 1), (2, 1), (2, 2), (3, 1), (3, 2)] {
        for theta in [0.0, 0.4, PI / 3.0, 2.5] {
            let dim = n + m + 1;
            let lib = beamsplitter_state(n, m, theta, d(dim)).unwrap();
            let oracle = creation_operator_state(n, m, theta, dim);
            assert!(max_diff(&lib, &oracle) < 1e-12, "({n},{m},{theta})");
        }
    }
}

#[test]
fn low_order_outputs_are_noon() {
    let n1 = beamsplitter_state(1, 0, PI, d(3)).unwrap();
    assert!(max_diff(&n1, &noon_oracle(1, 3)) < 1e-14);
    let n2 = beamsplitter_state(1, 1, 0.0, d(3)).unwrap();
    assert!(max_diff(&n2, &noon_oracle(2, 3)) < 1e-14);
}

#[test]
fn balanced_split_has_period_pi() {
    for n in 1..=3 {
        for theta in [0.0, 0.3, 1.7] {
            let a = beamsplitter_state(n, n, theta, d(2 * n + 1)).unwrap();
            let b = beamsplitter_state(n, n, theta + PI, d(2 * n + 1)).unwrap();
            assert!(max_diff(&a, &b) < 1e-13);
        }
    }
}

#[test]
fn decomposition_reproduces_noon_operator() {
    for big_n in 1..=6 {
        let dim = big_n + 1;
        let dec = noon_decomposition(big_n).unwrap();
        assert_relative_eq!(dec.total_weight(), 1.0, epsilon = 1e-12);
        let rho = dec.reconstruct(d(dim)).unwrap();
        assert!(max_diff(&rho, &noon_oracle(big_n, dim)) < 1e-10, "N = {big_n}");
        assert!(max_diff(&noon_state(big_n, d(dim)).unwrap(), &noon_oracle(big_n, dim)) < 1e-15);
    }
}

#[test]
fn all_phase_form_agrees_for_every_n() {
    // for even N this is the longer form; it must give the same operator
    for big_n in 1..=6 {
        let dim = big_n + 1;
        let a = all_phase_form(big_n, dim);
        let b = noon_decomposition(big_n).unwrap().reconstruct(d(dim)).unwrap();
        assert!(max_diff(&a, &noon_oracle(big_n, dim)) < 1e-10, "N = {big_n}");
        assert!(max_diff(&a, &b) < 1e-10, "N = {big_n}");
    }
}

#[test]
fn operator_identity_up_to_twelve() {
    for big_n in 7..=12 {
        let dim = big_n + 1;
        let rho = noon_decomposition(big_n).unwrap().reconstruct(d(dim)).unwrap();
        assert!(max_diff(&rho, &noon_oracle(big_n, dim)) < 1e-10, "N = {big_n}");
    }
}

#[test]
fn phase_sums_vanish_off_multiples() {
    for big_n in 1..=12 {
        let dec = noon_decomposition(big_n).unwrap();
        let k = dec.bs_terms.len() as f64;
        // balanced inputs only produce even phase differences
        let step = if big_n % 2 == 0 { 2 } else { 1 };
        for q in (step..=2 * big_n as i32).step_by(step as usize) {
            let s: C64 = dec.bs_terms.iter().map(|t| C64::from_polar(1.0, q as f64 * t.theta)).sum::<C64>() / k;
            if q as usize % big_n == 0 {
                assert_relative_eq!(s.norm(), 1.0, epsilon = 1e-12);
            } else {
                assert!(s.norm() < 1e-12, "N = {big_n}, q = {q}");
            }
        }
    }
}

#[test]
fn exact_weights() {
    let d3 = noon_decomposition(3).unwrap();
    assert!(d3.bs_terms.iter().all(|t| t.weight_exact == "4/9"));
    assert!(d3.correction_terms.iter().all(|t| t.weight_exact == "-1/6"));
    let d4 = noon_decomposition(4).unwrap();
    assert!(d4.bs_terms.iter().all(|t| t.weight_exact == "2/3"));
    assert_eq!(d4.correction_terms.len(), 1);
    assert_eq!(d4.correction_terms[0].weight_exact, "-1/3");
    assert_eq!(d4.correction_terms[0].j, 2);
    assert!(noon_decomposition(0).is_err());
    assert!(noon_decomposition(61).is_err());
}

fn fock_reps(cutoff: usize) -> BTreeMap<usize, Representation> {
    let dd = d(cutoff);
    let one = solve_representation(
        &Target::Fock { n: 1 },
        &ProbeSet::phase_averaged(&grids::SINGLE_PHOTON).unwrap(),
        dd,
        1e-12,
    )
    .unwrap();
    let (k, max) = grids::TWO_PHOTON_NOON;
    let two = solve_representation(&Target::Fock { n: 2 }, &ProbeSet::equally_spaced(k, max).unwrap(), dd, 1e-12)
        .unwrap();
    BTreeMap::from([(1, one), (2, two)])
}

#[test]
fn composed_fidelity_stable_under_larger_cutoff() {
    let dec = noon_decomposition(2).unwrap();
    let a = compose_with_fock_representations(&dec, &fock_reps(30)).unwrap();
    let b = compose_with_fock_representations(&dec, &fock_reps(40)).unwrap();
    assert!((a.fidelity() - b.fidelity()).abs() < 1e-8, "{} {}", a.fidelity(), b.fidelity());
    assert_relative_eq!(a.fidelity(), 0.9991247, epsilon = 1e-6);
}

#[test]
fn sampled_probes_reproduce_diagonal() {
    let dec = noon_decomposition(1).unwrap();
    let rep = compose_with_fock_representations(&dec, &fock_reps(30)).unwrap();
    let sampler = TwoModeSampler::new(&rep).unwrap();
    let zeta = sampler.mixture().zeta();
    let rho = rep.reconstruct().unwrap();
    let diag = rho.diagonal_values();
    let dim = 30;
    let cells = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0)];
    let n = 200_000;
    let mut sums = [0.0; 5];
    let mut sq = [0.0; 5];
    let mut rng = stream_rng(11, 0);
    for _ in 0..n {
        let p = sampler.sample(&mut rng);
        let (la, lb) = (p.out_a.norm_sqr(), p.out_b.norm_sqr());
        for (i, &(j, k)) in cells.iter().enumerate() {
            let pa = (-la).exp() * la.powi(j) / factorial(j as usize);
            let pb = (-lb).exp() * lb.powi(k) / factorial(k as usize);
            let x = zeta * p.sign * pa * pb;
            sums[i] += x;
            sq[i] += x * x;
        }
    }
    for (i, &(j, k)) in cells.iter().enumerate() {
        let mean = sums[i] / n as f64;
        let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = diag[j as usize * dim + k as usize];
        assert!((mean - exact).abs() < 4.0 * se, "cell ({j},{k}): {mean} vs {exact} +- {se}");
    }
}
