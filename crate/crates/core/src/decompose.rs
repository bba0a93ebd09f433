//! Signed decompositions of a target state over a set of classical probe states.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    self, coherent_state, coherent_vector, fidelity, overlap_with_pure, phase_averaged,
    CoherentAmplitude, DensityMatrix, FockDim, Observable, C64,
};
use crate::lp;
use crate::noon::{self, NoonDecomposition};
use crate::optim::golden_max;

/// JSON schema tag shared by every serialized artifact.
pub const SCHEMA: &str = "cse-lab/1";

/// A classical probe state, stored as a recipe rather than a matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Probe {
    /// Phase-averaged coherent state of amplitude `r`.
    PhaseAveraged { r: f64 },
    /// Coherent state.
    Coherent { alpha: CoherentAmplitude },
    /// Phase-averaged inputs `a`, `b` sent through the beamsplitter with phase `theta`.
    SplitPhaseAveraged { a: f64, b: f64, theta: f64 },
    /// Independent phase-averaged states on the two modes.
    ProductPhaseAveraged { a: f64, b: f64 },
    /// Arbitrary state given by its matrix.
    Explicit { matrix: DensityMatrix },
}

impl Probe {
    pub fn modes(&self) -> usize {
        match self {
            Probe::PhaseAveraged { .. } | Probe::Coherent { .. } => 1,
            Probe::SplitPhaseAveraged { .. } | Probe::ProductPhaseAveraged { .. } => 2,
            Probe::Explicit { matrix } => matrix.dims().len(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Probe::PhaseAveraged { r } => format!("pa({r})"),
            Probe::Coherent { alpha } => format!("coh({},{})", alpha.magnitude, alpha.phase),
            Probe::SplitPhaseAveraged { a, b, theta } => format!("bs({a},{b};{theta})"),
            Probe::ProductPhaseAveraged { a, b } => format!("pa({a})xpa({b})"),
            Probe::Explicit { .. } => "explicit".to_string(),
        }
    }

    /// Amplitude parameters as listed in reports.
    pub fn amplitudes(&self) -> Vec<f64> {
        match self {
            Probe::PhaseAveraged { r } => vec![*r],
            Probe::Coherent { alpha } => vec![alpha.magnitude, alpha.phase],
            Probe::SplitPhaseAveraged { a, b, theta } => vec![*a, *b, *theta],
            Probe::ProductPhaseAveraged { a, b } => vec![*a, *b],
            Probe::Explicit { .. } => vec![],
        }
    }

    pub fn is_pure(&self) -> bool {
        match self {
            Probe::Coherent { .. } => true,
            Probe::PhaseAveraged { r } => *r == 0.0,
            Probe::ProductPhaseAveraged { a, b } | Probe::SplitPhaseAveraged { a, b, .. } => {
                *a == 0.0 && *b == 0.0
            }
            Probe::Explicit { matrix } => (matrix.purity() - 1.0).abs() < 1e-12,
        }
    }

    /// Dense matrix at per-mode cutoff `d`.
    pub fn density(&self, d: FockDim) -> Result<DensityMatrix> {
        match self {
            Probe::PhaseAveraged { r } => phase_averaged(*r, d),
            Probe::Coherent { alpha } => coherent_state(*alpha, d),
            Probe::SplitPhaseAveraged { a, b, theta } => {
                let diag = product_diagonal(*a, *b, d)?;
                let mut out = DMatrix::zeros(d.get() * d.get(), d.get() * d.get());
                noon::add_split_diagonal(&mut out, &diag, *theta, d, 1.0);
                Ok(DensityMatrix::from_raw(vec![d.get(), d.get()], out))
            }
            Probe::ProductPhaseAveraged { a, b } => {
                DensityMatrix::diagonal(vec![d.get(), d.get()], &product_diagonal(*a, *b, d)?)
            }
            Probe::Explicit { matrix } => {
                if matrix.dims().iter().any(|&x| x != d.get()) {
                    return Err(Error::dims(d.get(), matrix.dims()));
                }
                Ok(matrix.clone())
            }
        }
    }
}

fn product_diagonal(a: f64, b: f64, d: FockDim) -> Result<Vec<f64>> {
    let pa = phase_averaged(a, d)?.diagonal_values();
    let pb = phase_averaged(b, d)?.diagonal_values();
    Ok(pa.iter().flat_map(|x| pb.iter().map(move |y| x * y)).collect())
}

/// An ordered list of probes sharing one mode count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Probe>", into = "Vec<Probe>")]
pub struct ProbeSet {
    probes: Vec<Probe>,
}

impl TryFrom<Vec<Probe>> for ProbeSet {
    type Error = Error;
    fn try_from(v: Vec<Probe>) -> Result<Self> {
        ProbeSet::new(v)
    }
}

impl From<ProbeSet> for Vec<Probe> {
    fn from(p: ProbeSet) -> Self {
        p.probes
    }
}

impl ProbeSet {
    pub fn new(probes: Vec<Probe>) -> Result<Self> {
        let Some(first) = probes.first() else {
            return Err(Error::domain("probe set is empty"));
        };
        let modes = first.modes();
        if probes.iter().any(|p| p.modes() != modes) {
            return Err(Error::domain("probes act on different numbers of modes"));
        }
        for p in &probes {
            if p.amplitudes().iter().any(|x| !x.is_finite()) {
                return Err(Error::domain(format!("non-finite probe parameter in {}", p.label())));
            }
            if let Probe::PhaseAveraged { r } = p {
                if *r < 0.0 {
                    return Err(Error::domain(format!("negative probe amplitude {r}")));
                }
            }
        }
        Ok(Self { probes })
    }

    /// Phase-averaged coherent probes at the given amplitudes.
    pub fn phase_averaged(amplitudes: &[f64]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&r| Probe::PhaseAveraged { r }).collect())
    }

    /// `k` phase-averaged probes equally spaced on `[0, max]`.
    pub fn equally_spaced(k: usize, max: f64) -> Result<Self> {
        if k < 2 {
            return Self::phase_averaged(&[0.0]);
        }
        let amps: Vec<f64> = (0..k).map(|i| max * i as f64 / (k - 1) as f64).collect();
        Self::phase_averaged(&amps)
    }

    pub fn coherent(amplitudes: &[CoherentAmplitude]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&alpha| Probe::Coherent { alpha }).collect())
    }

    pub fn explicit(matrices: Vec<DensityMatrix>) -> Result<Self> {
        for m in &matrices {
            m.check_physical()?;
        }
        Self::new(matrices.into_iter().map(|matrix| Probe::Explicit { matrix }).collect())
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn modes(&self) -> usize {
        self.probes[0].modes()
    }

    pub fn labels(&self) -> Vec<String> {
        self.probes.iter().map(Probe::label).collect()
    }

    pub fn densities(&self, d: FockDim) -> Result<Vec<DensityMatrix>> {
        self.probes.iter().map(|p| p.density(d)).collect()
    }
}

/// The state a representation approximates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Fock { n: usize },
    FockProduct { n: usize, m: usize },
    /// `(|N,0> - |0,N>)/sqrt(2)`.
    Noon { n: usize },
    Explicit { matrix: DensityMatrix },
}

impl Target {
    pub fn density(&self, d: FockDim) -> Result<DensityMatrix> {
        match self {
            Target::Fock { n } => DensityMatrix::fock(*n, d),
            Target::FockProduct { n, m } => {
                fock::tensor_product(&DensityMatrix::fock(*n, d)?, &DensityMatrix::fock(*m, d)?)
            }
            Target::Noon { n } => noon::noon_state(*n, d),
            Target::Explicit { matrix } => Ok(matrix.clone()),
        }
    }

    pub fn modes(&self) -> usize {
        match self {
            Target::Fock { .. } => 1,
            Target::FockProduct { .. } | Target::Noon { .. } => 2,
            Target::Explicit { matrix } => matrix.dims().len(),
        }
    }

    pub fn is_pure(&self) -> bool {
        match self {
            Target::Explicit { matrix } => (matrix.purity() - 1.0).abs() < 1e-12,
            _ => true,
        }
    }
}

/// Fidelity of a (possibly signed) reconstruction with the target.
///
/// Pure targets use `<psi|rho|psi>`, which is the Uhlmann fidelity whenever `rho`
/// is a state and stays defined when a composed reconstruction has small negative
/// eigenvalues.
pub fn representation_fidelity(target: &DensityMatrix, rho: &DensityMatrix) -> Result<f64> {
    if target.dims() != rho.dims() {
        return Err(Error::dims(target.dims(), rho.dims()));
    }
    if (target.purity() - 1.0).abs() < 1e-12 {
        Ok(overlap_with_pure(target, rho))
    } else {
        fidelity(target, rho)
    }
}

/// Probe set plus signed coefficients summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    probes: ProbeSet,
    coefficients: Vec<f64>,
    zeta_plus: f64,
    zeta_minus: f64,
    fidelity: f64,
    target: Target,
    cutoff: FockDim,
    noon: Option<NoonDecomposition>,
}

impl Representation {
    /// Builds a representation from given coefficients and evaluates its fidelity.
    pub fn from_coefficients(
        probes: ProbeSet,
        coefficients: Vec<f64>,
        target: Target,
        cutoff: FockDim,
    ) -> Result<Self> {
        let mut rep = Self::assemble(probes, coefficients, target, cutoff, f64::NAN)?;
        let rho = rep.reconstruct()?;
        rep.fidelity = representation_fidelity(&rep.target.density(cutoff)?, &rho)?;
        Ok(rep)
    }

    /// Like [`Representation::from_coefficients`] but leaves the fidelity as NaN.
    pub fn unevaluated(
        probes: ProbeSet,
        coefficients: Vec<f64>,
        target: Target,
        cutoff: FockDim,
    ) -> Result<Self> {
        Self::assemble(probes, coefficients, target, cutoff, f64::NAN)
    }

    pub(crate) fn assemble(
        probes: ProbeSet,
        coefficients: Vec<f64>,
        target: Target,
        cutoff: FockDim,
        fidelity: f64,
    ) -> Result<Self> {
        if coefficients.len() != probes.len() {
            return Err(Error::dims(probes.len(), coefficients.len()));
        }
        if probes.modes() != target.modes() {
            return Err(Error::dims(target.modes(), probes.modes()));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("non-finite coefficient".into()));
        }
        let sum: f64 = coefficients.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("coefficients sum to {sum}, not 1")));
        }
        let zeta_plus = coefficients.iter().filter(|&&c| c > 0.0).sum();
        let zeta_minus = -coefficients.iter().filter(|&&c| c < 0.0).sum::<f64>();
        Ok(Self { probes, coefficients, zeta_plus, zeta_minus, fidelity, target, cutoff, noon: None })
    }

    pub(crate) fn with_noon(mut self, dec: NoonDecomposition) -> Self {
        self.noon = Some(dec);
        self
    }

    pub fn probes(&self) -> &ProbeSet {
        &self.probes
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn zeta_plus(&self) -> f64 {
        self.zeta_plus
    }

    pub fn zeta_minus(&self) -> f64 {
        self.zeta_minus
    }

    /// `zeta_+ + zeta_-`.
    pub fn zeta(&self) -> f64 {
        self.zeta_plus + self.zeta_minus
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn cutoff(&self) -> FockDim {
        self.cutoff
    }

    pub fn noon(&self) -> Option<&NoonDecomposition> {
        self.noon.as_ref()
    }

    /// `sum_j c_j rho_j` at the representation's cutoff.
    pub fn reconstruct(&self) -> Result<DensityMatrix> {
        reconstruct_terms(
            self.probes.probes().iter().zip(self.coefficients.iter().copied()),
            self.probes.modes(),
            self.cutoff,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RepresentationFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: RepresentationFile = serde_json::from_str(s)?;
        f.try_into()
    }
}

/// Weighted probe sum. Two-mode split probes are grouped by beamsplitter phase so
/// only one transform per phase is applied.
pub(crate) fn reconstruct_terms<'a>(
    terms: impl Iterator<Item = (&'a Probe, f64)>,
    modes: usize,
    d: FockDim,
) -> Result<DensityMatrix> {
    let dim = d.get().pow(modes as u32);
    let dims = vec![d.get(); modes];
    let mut diag = vec![0.0; dim];
    let mut dense: Option<DMatrix<C64>> = None;
    let mut split: Vec<(f64, Vec<f64>)> = Vec::new();
    for (probe, c) in terms {
        match probe {
            Probe::PhaseAveraged { r } => {
                for (x, p) in diag.iter_mut().zip(phase_averaged(*r, d)?.diagonal_values()) {
                    *x += c * p;
                }
            }
            Probe::ProductPhaseAveraged { a, b } => {
                for (x, p) in diag.iter_mut().zip(product_diagonal(*a, *b, d)?) {
                    *x += c * p;
                }
            }
            Probe::SplitPhaseAveraged { a, b, theta } => {
                let p = product_diagonal(*a, *b, d)?;
                let slot = match split.iter().position(|(t, _)| t.to_bits() == theta.to_bits()) {
                    Some(i) => i,
                    None => {
                        split.push((*theta, vec![0.0; dim]));
                        split.len() - 1
                    }
                };
                for (x, y) in split[slot].1.iter_mut().zip(p) {
                    *x += c * y;
                }
            }
            Probe::Coherent { .. } | Probe::Explicit { .. } => {
                let m = probe.density(d)?;
                let acc = dense.get_or_insert_with(|| DMatrix::zeros(dim, dim));
                acc.zip_apply(m.matrix(), |x, y| *x += y * c);
            }
        }
    }
    let mut out = dense.unwrap_or_else(|| DMatrix::zeros(dim, dim));
    for (i, x) in diag.iter().enumerate() {
        out[(i, i)] += C64::new(*x, 0.0);
    }
    for (theta, input) in &split {
        noon::add_split_diagonal(&mut out, input, *theta, d, 1.0);
    }
    Ok(DensityMatrix::from_raw(dims, out))
}

#[derive(Serialize, Deserialize)]
struct RepresentationFile {
    schema: String,
    cutoff: usize,
    target: Target,
    probe_labels: Vec<String>,
    amplitudes: Vec<Vec<f64>>,
    probes: Vec<Probe>,
    coefficients: Vec<f64>,
    zeta_plus: f64,
    zeta_minus: f64,
    fidelity: f64,
    #[serde(flatten, skip_serializing_if = "Option::is_none", default)]
    noon: Option<NoonDecomposition>,
}

impl From<&Representation> for RepresentationFile {
    fn from(r: &Representation) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            cutoff: r.cutoff.get(),
            target: r.target.clone(),
            probe_labels: r.probes.labels(),
            amplitudes: r.probes.probes().iter().map(Probe::amplitudes).collect(),
            probes: r.probes.probes().to_vec(),
            coefficients: r.coefficients.clone(),
            zeta_plus: r.zeta_plus,
            zeta_minus: r.zeta_minus,
            fidelity: r.fidelity,
            noon: r.noon.clone(),
        }
    }
}

impl TryFrom<RepresentationFile> for Representation {
    type Error = Error;
    fn try_from(f: RepresentationFile) -> Result<Self> {
        if f.schema != SCHEMA {
            return Err(Error::domain(format!("unknown schema {}", f.schema)));
        }
        let rep = Representation::assemble(
            ProbeSet::new(f.probes)?,
            f.coefficients,
            f.target,
            FockDim::new(f.cutoff)?,
            f.fidelity,
        )?;
        Ok(match f.noon {
            Some(n) => rep.with_noon(n),
            None => rep,
        })
    }
}

const MAX_ITER: usize = 5000;

/// Maximizes the fidelity of `sum_j c_j rho_j` with `target` subject to
/// `sum_j c_j = 1` and positivity of the combination.
///
/// Diagonal targets over diagonal probes reduce positivity to per-level sign
/// constraints: a Fock target is then an exact linear program, a mixed diagonal
/// target is handled by Frank-Wolfe on the root fidelity with the same linear
/// program as oracle. Anything else uses alternating projected gradient ascent.
pub fn solve_representation(
    target: &Target,
    probes: &ProbeSet,
    cutoff: FockDim,
    tol: f64,
) -> Result<Representation> {
    if probes.modes() != 1 || target.modes() != 1 {
        return Err(Error::domain(
            "the solver handles single-mode targets; two-mode states are composed from them",
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let tau = target.density(cutoff)?;
    tau.check_physical()?;
    let mats = probes.densities(cutoff)?;
    warn_if_dependent(&mats);

    let diagonal = tau.is_diagonal() && mats.iter().all(DensityMatrix::is_diagonal);
    let c = if diagonal {
        let cols: Vec<Vec<f64>> = mats.iter().map(DensityMatrix::diagonal_values).collect();
        let q = tau.diagonal_values();
        let support: Vec<usize> = (0..q.len()).filter(|&n| q[n] > 0.0).collect();
        if support.len() == 1 {
            solve_fock_lp(&cols, support[0])?
        } else {
            frank_wolfe(&cols, &q, tol)?
        }
    } else {
        projected_gradient(&tau, &mats, tol)?
    };
    let rho = reconstruct_dense(&mats, &c);
    let f = representation_fidelity(&tau, &rho)?;
    Representation::assemble(probes.clone(), c, target.clone(), cutoff, f)
}

fn reconstruct_dense(mats: &[DensityMatrix], c: &[f64]) -> DensityMatrix {
    let mut acc = DensityMatrix::zeros(mats[0].dims().to_vec());
    for (m, &w) in mats.iter().zip(c) {
        acc.add_scaled(w, m).expect("probe dims agree");
    }
    acc
}

fn gram(mats: &[DensityMatrix]) -> DMatrix<f64> {
    let k = mats.len();
    DMatrix::from_fn(k, k, |i, j| mats[i].overlap(&mats[j]).expect("probe dims agree"))
}

fn warn_if_dependent(mats: &[DensityMatrix]) {
    let g = gram(mats);
    let sv = g.singular_values();
    let top = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-14 * top).count();
    if rank < mats.len() {
        log::warn!("probe set is linearly dependent (rank {rank} of {})", mats.len());
    }
}

/// `max c.P(n)` subject to `P(n') . c >= 0` for every level and `sum c = 1`.
fn solve_fock_lp(cols: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    let levels = cols[0].len();
    let rows: Vec<Vec<f64>> = (0..levels).map(|l| cols.iter().map(|c| c[l]).collect()).collect();
    let g: Vec<f64> = cols.iter().map(|c| c[n]).collect();
    lp::maximize_on_normalized_cone(&g, &rows)
}

fn root_fidelity_diag(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(a, b)| (a * b.max(0.0)).sqrt()).sum()
}

fn combine(cols: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; cols[0].len()];
    for (col, &w) in cols.iter().zip(c) {
        for (x, y) in p.iter_mut().zip(col) {
            *x += w * y;
        }
    }
    p
}

fn frank_wolfe(cols: &[Vec<f64>], q: &[f64], tol: f64) -> Result<Vec<f64>> {
    let k = cols.len();
    let levels = q.len();
    let rows: Vec<Vec<f64>> = (0..levels).map(|l| cols.iter().map(|c| c[l]).collect()).collect();
    // start from the best single probe
    let best = (0..k)
        .max_by(|&a, &b| root_fidelity_diag(q, &cols[a]).total_cmp(&root_fidelity_diag(q, &cols[b])))
        .expect("nonempty probe set");
    let mut c = vec![0.0; k];
    c[best] = 1.0;
    for _ in 0..MAX_ITER {
        let p = combine(cols, &c);
        let grad: Vec<f64> = cols
            .iter()
            .map(|col| {
                col.iter()
                    .zip(q.iter().zip(&p))
                    .filter(|(_, (qn, _))| **qn > 0.0)
                    .map(|(pj, (qn, pn))| qn.sqrt() * pj / (2.0 * pn.max(1e-30).sqrt()))
                    .sum()
            })
            .collect();
        let s = lp::maximize_on_normalized_cone(&grad, &rows)?;
        let gap: f64 = grad.iter().zip(s.iter().zip(&c)).map(|(g, (a, b))| g * (a - b)).sum();
        if gap < tol {
            return Ok(c);
        }
        let f = |gamma: f64| {
            let mix: Vec<f64> = c.iter().zip(&s).map(|(a, b)| a + gamma * (b - a)).collect();
            root_fidelity_diag(q, &combine(cols, &mix))
        };
        let (gamma, _) = golden_max(f, 0.0, 1.0, 1e-12);
        for (a, b) in c.iter_mut().zip(&s) {
            *a += gamma * (b - *a);
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITER })
}

/// Solves `min ||sum c_j rho_j - x||_F` with `sum c = 1`.
fn pull_back(g: &DMatrix<f64>, mats: &[DensityMatrix], x: &DensityMatrix) -> Vec<f64> {
    let k = mats.len();
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    kkt.view_mut((0, 0), (k, k)).copy_from(g);
    let mut rhs = DVector::zeros(k + 1);
    for j in 0..k {
        kkt[(j, k)] = 1.0;
        kkt[(k, j)] = 1.0;
        rhs[j] = mats[j].overlap(x).expect("probe dims agree");
    }
    rhs[k] = 1.0;
    let sol = kkt.svd(true, true).solve(&rhs, 1e-14).expect("svd with both factors");
    let mut c: Vec<f64> = sol.iter().take(k).copied().collect();
    let s: f64 = c.iter().sum();
    let shift = (1.0 - s) / k as f64;
    c.iter_mut().for_each(|x| *x += shift);
    c
}

fn psd_projection(rho: &DensityMatrix) -> DensityMatrix {
    let (vals, vecs) = fock::hermitian_eigen(rho.matrix());
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&x| C64::new(x.max(0.0), 0.0)),
    ));
    DensityMatrix::from_raw(rho.dims().to_vec(), &vecs * d * vecs.adjoint())
}

/// Alternates PSD projection and least-squares pull-back onto the probe span.
fn make_feasible(g: &DMatrix<f64>, mats: &[DensityMatrix], mut c: Vec<f64>) -> Option<Vec<f64>> {
    for _ in 0..200 {
        let rho = reconstruct_dense(mats, &c);
        if rho.min_eigenvalue() >= -fock::EIG_TOL {
            return Some(c);
        }
        c = pull_back(g, mats, &psd_projection(&rho));
    }
    None
}

fn soft_fidelity(tau: &DensityMatrix, rho: &DensityMatrix) -> f64 {
    if (tau.purity() - 1.0).abs() < 1e-12 {
        overlap_with_pure(tau, rho)
    } else {
        let p = psd_projection(rho);
        let tr = p.trace();
        let p = DensityMatrix::from_raw(p.dims().to_vec(), p.matrix() / C64::new(tr, 0.0));
        fidelity(tau, &p).unwrap_or(0.0)
    }
}

fn projected_gradient(tau: &DensityMatrix, mats: &[DensityMatrix], tol: f64) -> Result<Vec<f64>> {
    let k = mats.len();
    let g = gram(mats);
    let objective = |c: &[f64]| soft_fidelity(tau, &reconstruct_dense(mats, c));

    let mut c = {
        let best = (0..k)
            .max_by(|&a, &b| {
                let fa = soft_fidelity(tau, &mats[a]);
                let fb = soft_fidelity(tau, &mats[b]);
                fa.total_cmp(&fb)
            })
            .expect("nonempty probe set");
        let mut e = vec![0.0; k];
        e[best] = 1.0;
        e
    };
    if let Some(fit) = make_feasible(&g, mats, pull_back(&g, mats, tau)) {
        if objective(&fit) > objective(&c) {
            c = fit;
        }
    }
    let mut f = objective(&c);
    let mut step = 1.0;
    let h = 1e-7;
    for _ in 0..MAX_ITER {
        if f >= 1.0 - 1e-15 || step < 1e-12 {
            return Ok(c);
        }
        let mut grad: Vec<f64> = (0..k)
            .map(|j| {
                let mut up = c.clone();
                let mut dn = c.clone();
                up[j] += h;
                dn[j] -= h;
                (objective(&up) - objective(&dn)) / (2.0 * h)
            })
            .collect();
        let mean = grad.iter().sum::<f64>() / k as f64;
        grad.iter_mut().for_each(|x| *x -= mean);
        let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < tol {
            return Ok(c);
        }
        let trial: Vec<f64> = c.iter().zip(&grad).map(|(a, b)| a + step * b / norm).collect();
        match make_feasible(&g, mats, trial) {
            Some(t) => {
                let ft = objective(&t);
                if ft > f {
                    let gain = ft - f;
                    c = t;
                    f = ft;
                    step *= 1.5;
                    if gain < tol * 1e-3 {
                        return Ok(c);
                    }
                } else {
                    step *= 0.5;
                }
            }
            None => step *= 0.5,
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITER })
}

/// Upper bound `2 M sqrt(1 - F)` on `|Tr A (rho - rho_true)|` for `||A|| <= M`.
pub fn systematic_error_bound(fidelity: f64, m: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fidelity) {
        return Err(Error::domain(format!("fidelity {fidelity} outside [0, 1]")));
    }
    if !(m >= 0.0) {
        return Err(Error::domain(format!("observable bound {m} must be >= 0")));
    }
    Ok(2.0 * m * (1.0 - fidelity).sqrt())
}

/// Least-squares weights `z` with `sum z_m Pi_m` closest to `target` on the diagonal.
///
/// Elements whose diagonal has not decayed at the last retained level while the
/// target has cannot carry weight in the untruncated limit; they are pinned to
/// zero. A rank-deficient design yields the minimum-norm solution.
pub fn approximate_observable(target: &Observable, povm: &[Observable]) -> Result<Vec<f64>> {
    if povm.is_empty() {
        return Err(Error::domain("empty POVM"));
    }
    let n = target.matrix().nrows();
    for p in povm {
        if p.dims() != target.dims() {
            return Err(Error::dims(target.dims(), p.dims()));
        }
    }
    let diag = |o: &Observable| -> Vec<f64> { (0..n).map(|i| o.matrix()[(i, i)].re).collect() };
    let w = diag(target);
    let cols: Vec<Vec<f64>> = povm.iter().map(diag).collect();

    let mut sum = vec![0.0; n];
    for c in &cols {
        for (s, x) in sum.iter_mut().zip(c) {
            *s += x;
        }
    }
    if let Some(bad) = sum.iter().find(|s| (*s - 1.0).abs() > 1e-8) {
        return Err(Error::domain(format!("POVM elements sum to {bad} on the diagonal")));
    }

    let edge_tol = 1e-8;
    let target_scale = w.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-300);
    let target_decays = w[n - 1].abs() <= edge_tol * target_scale;
    let active: Vec<usize> = (0..cols.len())
        .filter(|&m| !(target_decays && cols[m][n - 1].abs() > edge_tol))
        .collect();

    let a = DMatrix::from_fn(n, active.len(), |i, j| cols[active[j]][i]);
    let b = DVector::from_column_slice(&w);
    let svd = a.svd(true, true);
    let top = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * top).count();
    if rank < active.len() {
        log::warn!("observable fit is rank deficient ({rank} of {})", active.len());
    }
    let sol = svd
        .solve(&b, 1e-12 * top)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let mut z = vec![0.0; cols.len()];
    for (j, &m) in active.iter().enumerate() {
        z[m] = sol[j];
    }
    Ok(z)
}

/// `<alpha_j|[a, rho - rho_true]|alpha_j>` for every coherent probe.
///
/// With fixed coefficients this equals `(dD/dx + i dD/dy) / (4 c_j)` where
/// `D = Tr (rho - rho_true)^2` and `alpha_j = x + i y`.
pub fn optimality_residual(rep: &Representation) -> Result<Vec<C64>> {
    let d = rep.cutoff();
    let alphas: Vec<CoherentAmplitude> = rep
        .probes()
        .probes()
        .iter()
        .map(|p| match p {
            Probe::Coherent { alpha } => Ok(*alpha),
            _ => Err(Error::NonCoherentProbe),
        })
        .collect::<Result<_>>()?;
    let mut delta = rep.reconstruct()?;
    delta.add_scaled(-1.0, &rep.target().density(d)?)?;
    let lower = annihilation(d.get());
    let comm = &lower * delta.matrix() - delta.matrix() * &lower;
    alphas
        .iter()
        .map(|a| {
            let v = coherent_vector(a.value(), d)?;
            Ok((v.adjoint() * &comm * &v)[(0, 0)])
        })
        .collect()
}

pub(crate) fn annihilation(d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    #[test]
    fn single_probe_target() {
        let probes = ProbeSet::phase_averaged(&[0.7]).unwrap();
        let target = Target::Explicit { matrix: phase_averaged(0.7, d(20)).unwrap() };
        let rep = solve_representation(&target, &probes, d(20), 1e-10).unwrap();
        assert_eq!(rep.coefficients(), &[1.0]);
        assert!((rep.fidelity() - 1.0).abs() < 1e-12);
        assert_eq!(rep.zeta_minus(), 0.0);
    }

    #[test]
    fn vacuum_is_exact() {
        let probes = ProbeSet::phase_averaged(&[0.0, 0.5, 1.0]).unwrap();
        let rep = solve_representation(&Target::Fock { n: 0 }, &probes, d(20), 1e-10).unwrap();
        assert!((rep.fidelity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_bound_examples() {
        assert_eq!(systematic_error_bound(1.0, 3.0).unwrap(), 0.0);
        assert!((systematic_error_bound(0.9996, 1.0).unwrap() - 0.04).abs() < 1e-12);
        assert!(systematic_error_bound(1.2, 1.0).is_err());
    }
}
