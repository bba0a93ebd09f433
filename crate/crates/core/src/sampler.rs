//! Signed-mixture Monte Carlo: probe sampling, estimators and variance accounting.
//!
//! Trials are grouped in fixed chunks of [`CHUNK`]. Chunk `k` draws from a ChaCha8
//! stream seeded with the run seed and stream id `k`; chunk sums are merged in
//! chunk order, so the result depends on `(seed, N)` only and not on the number
//! of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::Representation;
use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, Observable};

pub type StreamRng = ChaCha8Rng;

/// Trials per RNG stream.
pub const CHUNK: u64 = 1 << 16;

/// Generator for stream `stream` of run `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent run seed, e.g. for the points of a scan.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Probabilities `|c_j| / zeta` with the sign of each `c_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedMixture {
    probabilities: Vec<f64>,
    signs: Vec<f64>,
    zeta: f64,
    cdf: Vec<f64>,
}

impl SignedMixture {
    pub fn new(coefficients: &[f64]) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::domain("empty mixture"));
        }
        let zeta: f64 = coefficients.iter().map(|c| c.abs()).sum();
        let sum: f64 = coefficients.iter().sum();
        if !(zeta > 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("coefficients sum to {sum}, not 1")));
        }
        let probabilities: Vec<f64> = coefficients.iter().map(|c| c.abs() / zeta).collect();
        let signs = coefficients.iter().map(|&c| if c < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut cdf = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for p in &probabilities {
            acc += p;
            cdf.push(acc);
        }
        let last = cdf.len() - 1;
        cdf[last] = f64::INFINITY;
        Ok(Self { probabilities, signs, zeta, cdf })
    }

    pub fn from_representation(rep: &Representation) -> Self {
        Self::new(rep.coefficients()).expect("representation coefficients sum to one")
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Draws a probe index and its sign.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let u: f64 = rng.random();
        let j = self.cdf.partition_point(|&c| c <= u);
        (j, self.signs[j])
    }
}

/// Draws `(probe_index, sign)` from the mixture.
pub fn sample_signed<R: Rng + ?Sized>(mix: &SignedMixture, rng: &mut R) -> (usize, f64) {
    mix.sample(rng)
}

/// Outcome values with one distribution per probe.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementModel {
    values: Vec<f64>,
    tables: Vec<Vec<f64>>,
    cdfs: Vec<Vec<f64>>,
}

impl MeasurementModel {
    pub fn new(values: Vec<f64>, tables: Vec<Vec<f64>>) -> Result<Self> {
        let mut cdfs = Vec::with_capacity(tables.len());
        for t in &tables {
            if t.len() != values.len() {
                return Err(Error::dims(values.len(), t.len()));
            }
            if t.iter().any(|&p| !(p >= -1e-12)) {
                return Err(Error::domain("negative outcome probability"));
            }
            let s: f64 = t.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::domain(format!("outcome distribution sums to {s}")));
            }
            let mut acc = 0.0;
            let mut cdf: Vec<f64> = t
                .iter()
                .map(|p| {
                    acc += p.max(0.0);
                    acc
                })
                .collect();
            let last = cdf.len() - 1;
            cdf[last] = f64::INFINITY;
            cdfs.push(cdf);
        }
        Ok(Self { values, tables, cdfs })
    }

    /// Projective measurement of `a` on each probe state.
    pub fn from_observable(a: &Observable, probes: &[DensityMatrix]) -> Result<Self> {
        let (vals, vecs) = fock::hermitian_eigen(a.matrix());
        let mut tables = Vec::with_capacity(probes.len());
        for rho in probes {
            if rho.dims() != a.dims() {
                return Err(Error::dims(a.dims(), rho.dims()));
            }
            let t: Vec<f64> = (0..vals.len())
                .map(|k| {
                    let v = vecs.column(k);
                    (v.adjoint() * rho.matrix() * v)[(0, 0)].re.max(0.0)
                })
                .collect();
            let s: f64 = t.iter().sum();
            tables.push(t.iter().map(|x| x / s).collect());
        }
        Self::new(vals, tables)
    }

    /// Each probe reports a fixed value, e.g. an exact expectation `Tr(rho_j A)`.
    pub fn expectation_valued(per_probe: Vec<f64>) -> Result<Self> {
        let k = per_probe.len();
        let tables = (0..k)
            .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(per_probe, tables)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probabilities(&self, probe: usize) -> &[f64] {
        &self.tables[probe]
    }

    pub fn num_probes(&self) -> usize {
        self.tables.len()
    }

    /// First and second moment of the outcome on probe `j`.
    pub fn moments(&self, probe: usize) -> (f64, f64) {
        self.tables[probe].iter().zip(&self.values).fold((0.0, 0.0), |(m1, m2), (p, v)| {
            (m1 + p * v, m2 + p * v * v)
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, probe: usize, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let k = self.cdfs[probe].partition_point(|&c| c <= u);
        self.values[k]
    }
}

/// One Monte Carlo trial producing `width()` signed, zeta-scaled records.
pub trait Trial: Sync {
    fn width(&self) -> usize {
        1
    }
    fn run(&self, rng: &mut StreamRng, out: &mut [f64]);
}

/// Draw a probe, measure it, record `zeta * sign * outcome`.
pub struct SignedTrial<'a> {
    pub mix: &'a SignedMixture,
    pub meas: &'a MeasurementModel,
}

impl Trial for SignedTrial<'_> {
    fn run(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let (j, s) = self.mix.sample(rng);
        out[0] = self.mix.zeta() * s * self.meas.sample(j, rng);
    }
}

/// Running sums of the records and their pairwise products.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub sum: Vec<f64>,
    /// Row-major `width x width` sums of products.
    pub cross: Vec<f64>,
}

impl Moments {
    fn zero(width: usize) -> Self {
        Self { n: 0, sum: vec![0.0; width], cross: vec![0.0; width * width] }
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum.iter_mut().zip(&o.sum).for_each(|(a, b)| *a += b);
        self.cross.iter_mut().zip(&o.cross).for_each(|(a, b)| *a += b);
    }

    pub fn width(&self) -> usize {
        self.sum.len()
    }

    pub fn mean(&self, k: usize) -> f64 {
        self.sum[k] / self.n as f64
    }

    /// Unbiased sample covariance of records `i` and `k`.
    pub fn covariance(&self, i: usize, k: usize) -> f64 {
        let n = self.n as f64;
        if self.n < 2 {
            return 0.0;
        }
        let w = self.width();
        (self.cross[i * w + k] - self.sum[i] * self.sum[k] / n) / (n - 1.0)
    }

    pub fn estimate(&self, k: usize, seed: u64) -> EmulationEstimate {
        let var = self.covariance(k, k).max(0.0);
        EmulationEstimate {
            mean: self.mean(k),
            std_error: (var / self.n as f64).sqrt(),
            n_samples: self.n,
            seed,
            variance_empirical: var,
        }
    }
}

/// Runs `n` trials deterministically in `(seed, n)`.
pub fn run_trials<T: Trial>(trial: &T, n: u64, seed: u64) -> Moments {
    let width = trial.width();
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c);
            let count = CHUNK.min(n - c * CHUNK);
            let mut m = Moments::zero(width);
            let mut out = vec![0.0; width];
            for _ in 0..count {
                trial.run(&mut rng, &mut out);
                for i in 0..width {
                    m.sum[i] += out[i];
                    for k in 0..width {
                        m.cross[i * width + k] += out[i] * out[k];
                    }
                }
            }
            m.n = count;
            m
        })
        .collect();
    let mut total = Moments::zero(width);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Runs `f` on a pool of `threads` workers (0 = rayon default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(pool.install(f))
}

/// `<A>_N`, its standard error and the empirical single-trial variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulationEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub variance_empirical: f64,
}

/// Signed estimator `(zeta/N) sum_k sgn(c_{j_k}) A_k`.
pub fn emulate_expectation(
    mix: &SignedMixture,
    meas: &MeasurementModel,
    n: u64,
    seed: u64,
) -> Result<EmulationEstimate> {
    if n == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    if meas.num_probes() != mix.len() {
        return Err(Error::dims(mix.len(), meas.num_probes()));
    }
    Ok(run_trials(&SignedTrial { mix, meas }, n, seed).estimate(0, seed))
}

/// Single-trial variance with (`delta_ab`) and without (`delta_a`) the sign ancilla.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceBreakdown {
    pub delta_ab: f64,
    pub delta_a: f64,
    pub excess: f64,
}

impl VarianceBreakdown {
    /// From per-probe first and second moments of the recorded value.
    pub fn from_moments(coefficients: &[f64], m1: &[f64], m2: &[f64]) -> Self {
        let mean: f64 = coefficients.iter().zip(m1).map(|(c, a)| c * a).sum();
        let (mut zp, mut zm, mut sp, mut sm) = (0.0, 0.0, 0.0, 0.0);
        for (&c, &s2) in coefficients.iter().zip(m2) {
            if c > 0.0 {
                zp += c;
                sp += c * s2;
            } else {
                zm -= c;
                sm -= c * s2;
            }
        }
        let delta_ab = (zp + zm) * (sp + sm) - mean * mean;
        let delta_a = (zp - zm) * (sp - sm) - mean * mean;
        let excess = 2.0 * (zm * sp + zp * sm);
        Self { delta_ab, delta_a, excess }
    }
}

/// Variance accounting for measuring `a` projectively on the probes of `rep`.
pub fn excess_variance(rep: &Representation, a: &Observable) -> Result<VarianceBreakdown> {
    let mats = rep.probes().densities(rep.cutoff())?;
    let a2 = a.square();
    let m1 = mats.iter().map(|r| fock::expectation(a, r)).collect::<Result<Vec<_>>>()?;
    let m2 = mats.iter().map(|r| fock::expectation(&a2, r)).collect::<Result<Vec<_>>>()?;
    Ok(VarianceBreakdown::from_moments(rep.coefficients(), &m1, &m2))
}

/// Smallest `N` with `sigmas * sqrt(variance / N) <= halfwidth`.
pub fn required_samples(variance: f64, halfwidth: f64, sigmas: f64) -> Result<u64> {
    if !(variance >= 0.0) || !(halfwidth > 0.0) || !(sigmas > 0.0) {
        return Err(Error::domain("required_samples needs variance >= 0 and positive width"));
    }
    let ok = |n: u64| sigmas * (variance / n as f64).sqrt() <= halfwidth;
    let mut n = (sigmas * sigmas * variance / (halfwidth * halfwidth)).ceil().max(1.0) as u64;
    while !ok(n) {
        n += 1;
    }
    while n > 1 && ok(n - 1) {
        n -= 1;
    }
    Ok(n)
}

/// Expected `Tr (rho_hat - rho)^2` for an `N_s`-draw multinomial estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingMse {
    pub general: f64,
    /// Closed form valid when every probe is pure.
    pub pure: Option<f64>,
    /// The `(zeta^2 - 1)/N_s` part of the pure form.
    pub sign_term: f64,
}

impl SamplingMse {
    pub fn pure(&self) -> Result<f64> {
        self.pure.ok_or_else(|| Error::domain("pure-probe MSE requested for mixed probes"))
    }
}

pub fn sampling_mse(rep: &Representation, n_s: u64) -> Result<SamplingMse> {
    if n_s == 0 {
        return Err(Error::domain("N_s must be at least 1"));
    }
    let mats = rep.probes().densities(rep.cutoff())?;
    let rho = rep.reconstruct()?;
    let zeta = rep.zeta();
    let ns = n_s as f64;
    let weighted: f64 = rep
        .coefficients()
        .iter()
        .zip(&mats)
        .map(|(c, m)| c.abs() * m.purity())
        .sum();
    let general = (zeta * weighted - rho.purity()) / ns;
    let all_pure = rep.probes().probes().iter().all(|p| p.is_pure());
    let sign_term = (zeta * zeta - 1.0) / ns;
    let pure = all_pure.then(|| (1.0 - rho.purity()) / ns + sign_term);
    Ok(SamplingMse { general, pure, sign_term })
}

/// One line of a sampler run log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub mean: f64,
    pub std_error: f64,
    pub variance_predicted: f64,
    pub variance_empirical: f64,
}

impl RunRecord {
    pub fn new(est: &EmulationEstimate, variance_predicted: f64) -> Self {
        Self {
            seed: est.seed,
            n: est.n_samples,
            mean: est.mean,
            std_error: est.std_error,
            variance_predicted,
            variance_empirical: est.variance_empirical,
        }
    }
}
