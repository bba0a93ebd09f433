//! Truncated Fock-space states, observables and fidelity.
//!
//! Single-mode operators live on `span{|0>,...,|d-1>}`. Two-mode operators use the
//! Kronecker index `a * d_b + b`.

use std::sync::OnceLock;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Largest Poisson mass a truncation may discard.
pub const TAIL_TOL: f64 = 1e-10;
/// Eigenvalues in `[-EIG_TOL, 0)` are treated as round-off.
pub const EIG_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-8;

/// Number of retained Fock levels of one mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct FockDim(usize);

impl FockDim {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::domain(format!("Fock cutoff must be at least 2, got {d}")));
        }
        Ok(FockDim(d))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for FockDim {
    type Error = Error;
    fn try_from(d: usize) -> Result<Self> {
        FockDim::new(d)
    }
}

impl From<FockDim> for usize {
    fn from(d: FockDim) -> usize {
        d.0
    }
}

/// Complex coherent amplitude in polar form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherentAmplitude {
    pub magnitude: f64,
    pub phase: f64,
}

impl CoherentAmplitude {
    pub fn new(magnitude: f64, phase: f64) -> Result<Self> {
        if !magnitude.is_finite() || magnitude < 0.0 || !phase.is_finite() {
            return Err(Error::domain(format!(
                "coherent amplitude needs finite magnitude >= 0, got ({magnitude}, {phase})"
            )));
        }
        Ok(Self { magnitude, phase })
    }

    pub fn real(x: f64) -> Result<Self> {
        if x < 0.0 {
            Self::new(-x, std::f64::consts::PI)
        } else {
            Self::new(x, 0.0)
        }
    }

    pub fn value(self) -> C64 {
        C64::from_polar(self.magnitude, self.phase)
    }
}

static LN_FACT: OnceLock<Vec<f64>> = OnceLock::new();

/// `ln n!`, tabulated up to 4096 and summed beyond.
pub fn ln_factorial(n: usize) -> f64 {
    let table = LN_FACT.get_or_init(|| {
        let mut t = vec![0.0; 4097];
        for i in 1..t.len() {
            t[i] = t[i - 1] + (i as f64).ln();
        }
        t
    });
    if n < table.len() {
        table[n]
    } else {
        let mut acc = table[table.len() - 1];
        for i in table.len()..=n {
            acc += (i as f64).ln();
        }
        acc
    }
}

/// Untruncated Poisson weight `e^-l l^n / n!`.
pub fn poisson(lambda: f64, n: usize) -> f64 {
    if lambda == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (n as f64 * lambda.ln() - lambda - ln_factorial(n)).exp()
}

/// Poisson mass at and above level `d`.
pub fn poisson_tail(lambda: f64, d: usize) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut tail = 0.0;
    let mut n = d;
    loop {
        let p = poisson(lambda, n);
        tail += p;
        if (n as f64) > lambda && p < 1e-30 * tail.max(1e-300) {
            break;
        }
        if (n as f64) > lambda && p == 0.0 {
            break;
        }
        n += 1;
    }
    tail
}

/// Photon-number distribution of `|alpha|^2 = lambda` truncated to `d` levels and
/// renormalized; also returns the discarded mass.
pub fn truncated_poisson(lambda: f64, d: FockDim) -> Result<(Vec<f64>, f64)> {
    let d = d.get();
    let tail = poisson_tail(lambda, d);
    if tail > TAIL_TOL {
        return Err(Error::CutoffTooSmall { dim: d, tail });
    }
    let mut p: Vec<f64> = (0..d).map(|n| poisson(lambda, n)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Ok((p, tail))
}

/// Truncated, renormalized coherent state vector.
pub fn coherent_vector(alpha: C64, d: FockDim) -> Result<DVector<C64>> {
    let (p, _) = truncated_poisson(alpha.norm_sqr(), d)?;
    let phase = alpha.arg();
    Ok(DVector::from_iterator(
        d.get(),
        p.iter()
            .enumerate()
            .map(|(n, pn)| C64::from_polar(pn.sqrt(), n as f64 * phase)),
    ))
}

/// `|alpha><alpha|` truncated to `d` levels.
pub fn coherent_state(alpha: CoherentAmplitude, d: FockDim) -> Result<DensityMatrix> {
    let v = coherent_vector(alpha.value(), d)?;
    Ok(DensityMatrix::from_vector(vec![d.get()], &v))
}

/// Phase average of `|r e^{i phi}><r e^{i phi}|`: a diagonal Poisson state.
pub fn phase_averaged(r: f64, d: FockDim) -> Result<DensityMatrix> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::domain(format!("phase-averaged amplitude must be >= 0, got {r}")));
    }
    let (p, _) = truncated_poisson(r * r, d)?;
    DensityMatrix::diagonal(vec![d.get()], &p)
}

/// Hermitian operator on a (product of) truncated Fock space(s).
///
/// Physical states are additionally positive with unit trace; signed
/// reconstructions use the same type, see [`DensityMatrix::check_physical`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    data: DMatrix<C64>,
}

fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn check_shape(dims: &[usize], m: &DMatrix<C64>) -> Result<()> {
    if dims.is_empty() || dims.iter().any(|&d| d < 1) {
        return Err(Error::domain(format!("invalid mode dimensions {dims:?}")));
    }
    let n: usize = dims.iter().product();
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dims(n, (m.nrows(), m.ncols())));
    }
    Ok(())
}

impl DensityMatrix {
    pub fn new(dims: Vec<usize>, data: DMatrix<C64>) -> Result<Self> {
        check_shape(&dims, &data)?;
        let scale = data.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let defect = hermitian_defect(&data);
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self { dims, data })
    }

    pub(crate) fn from_raw(dims: Vec<usize>, data: DMatrix<C64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.nrows());
        Self { dims, data }
    }

    /// `|psi><psi|` for a vector that is normalized first.
    pub fn from_vector(dims: Vec<usize>, psi: &DVector<C64>) -> Self {
        let norm = psi.norm();
        let v = psi / C64::new(norm, 0.0);
        let data = &v * v.adjoint();
        Self::from_raw(dims, data)
    }

    pub fn diagonal(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::dims(n, values.len()));
        }
        let data = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            values.iter().map(|&x| C64::new(x, 0.0)),
        ));
        Ok(Self::from_raw(dims, data))
    }

    /// Number state `|n><n|` on `d` levels.
    pub fn fock(n: usize, d: FockDim) -> Result<Self> {
        if n >= d.get() {
            return Err(Error::domain(format!("|{n}> does not fit in {} levels", d.get())));
        }
        let mut p = vec![0.0; d.get()];
        p[n] = 1.0;
        Self::diagonal(vec![d.get()], &p)
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        Self::from_raw(dims, DMatrix::zeros(n, n))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[(i, i)].re).sum()
    }

    /// `Tr rho^2`.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn diagonal_values(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[(i, i)].re).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.data[(i, j)] == C64::new(0.0, 0.0)))
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, w: f64, other: &DensityMatrix) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dims(&self.dims, &other.dims));
        }
        self.data.zip_apply(&other.data, |a, b| *a += b * w);
        Ok(())
    }

    /// `Tr(self other)` for Hermitian operands.
    pub fn overlap(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::dims(&self.dims, &other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.transpose().iter())
            .map(|(a, b)| (a * b).re)
            .sum())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for block in components(&[&self.data]) {
            let (vals, _) = hermitian_eigen(&submatrix(&self.data, &block));
            out.extend(vals);
        }
        out.sort_by(|a, b| a.total_cmp(b));
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Unit trace and no eigenvalue below `-EIG_TOL`.
    pub fn check_physical(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::NotPhysical(format!("trace {tr}")));
        }
        let lo = self.min_eigenvalue();
        if lo < -EIG_TOL {
            return Err(Error::NotPhysical(format!("eigenvalue {lo:.3e}")));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    dims: Vec<usize>,
    /// Row-major `[re, im]` pairs.
    entries: Vec<[f64; 2]>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.data[(i, j)];
                entries.push([z.re, z.im]);
            }
        }
        MatrixRepr { dims: self.dims.clone(), entries }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MatrixRepr::deserialize(d)?;
        let n: usize = r.dims.iter().product();
        if r.entries.len() != n * n {
            return Err(serde::de::Error::custom("entry count does not match dims"));
        }
        let data = DMatrix::from_row_iterator(n, n, r.entries.iter().map(|e| C64::new(e[0], e[1])));
        DensityMatrix::new(r.dims, data).map_err(serde::de::Error::custom)
    }
}

/// Hermitian observable with a bound `M >= max |eigenvalue|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    dims: Vec<usize>,
    data: DMatrix<C64>,
    bound: f64,
}

impl Observable {
    pub fn new(dims: Vec<usize>, data: DMatrix<C64>) -> Result<Self> {
        let h = DensityMatrix::new(dims, data)?;
        let bound = h.eigenvalues().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        Ok(Self { dims: h.dims, data: h.data, bound })
    }

    pub fn diagonal(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        let h = DensityMatrix::diagonal(dims, values)?;
        let bound = values.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        Ok(Self { dims: h.dims, data: h.data, bound })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn square(&self) -> Observable {
        let data = &self.data * &self.data;
        Observable { dims: self.dims.clone(), data, bound: self.bound * self.bound }
    }
}

/// `Tr(A rho)`, real for Hermitian arguments.
pub fn expectation(a: &Observable, rho: &DensityMatrix) -> Result<f64> {
    if a.dims != rho.dims {
        return Err(Error::dims(&a.dims, &rho.dims));
    }
    Ok(a.data
        .iter()
        .zip(rho.data.transpose().iter())
        .map(|(x, y)| (x * y).re)
        .sum())
}

/// `rho_a (x) rho_b` with two-mode index `i * d_b + j`.
pub fn tensor_product(a: &DensityMatrix, b: &DensityMatrix) -> Result<DensityMatrix> {
    if a.dims.len() != 1 || b.dims.len() != 1 {
        return Err(Error::domain("tensor_product takes single-mode operands"));
    }
    Ok(DensityMatrix::from_raw(vec![a.dim(), b.dim()], a.data.kronecker(&b.data)))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2` of two physical states.
///
/// Eigenvalues in `[-EIG_TOL, 0)` are clamped to zero. The matrices are split into
/// the connected components of their joint sparsity pattern, so diagonal states and
/// photon-number-block states are cheap.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dims != sigma.dims {
        return Err(Error::dims(&rho.dims, &sigma.dims));
    }
    rho.check_physical()?;
    sigma.check_physical()?;
    let f = if (rho.purity() - 1.0).abs() < 1e-12 {
        overlap_with_pure(rho, sigma)
    } else if (sigma.purity() - 1.0).abs() < 1e-12 {
        overlap_with_pure(sigma, rho)
    } else {
        let mut root = 0.0;
        for block in components(&[&rho.data, &sigma.data]) {
            let r = submatrix(&rho.data, &block);
            let s = submatrix(&sigma.data, &block);
            let sr = psd_sqrt(&r);
            let m = &sr * s * &sr;
            let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
            let (vals, _) = hermitian_eigen(&m);
            root += vals.iter().map(|&x| x.max(0.0).sqrt()).sum::<f64>();
        }
        root * root
    };
    Ok(f.clamp(0.0, 1.0))
}

/// `<psi|sigma|psi>` where `pure = |psi><psi|`. `sigma` need not be positive.
pub fn overlap_with_pure(pure: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let n = pure.dim();
    let k = (0..n)
        .max_by(|&i, &j| pure.data[(i, i)].re.total_cmp(&pure.data[(j, j)].re))
        .unwrap_or(0);
    let scale = pure.data[(k, k)].re.sqrt();
    let psi = pure.data.column(k) / C64::new(scale, 0.0);
    let support: Vec<usize> = (0..n).filter(|&i| psi[i] != C64::new(0.0, 0.0)).collect();
    let mut acc = C64::new(0.0, 0.0);
    for &i in &support {
        for &j in &support {
            acc += psi[i].conj() * sigma.data[(i, j)] * psi[j];
        }
    }
    acc.re
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub(crate) fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    if m.nrows() == 1 {
        return (vec![m[(0, 0)].re], DMatrix::from_element(1, 1, C64::new(1.0, 0.0)));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, vecs) = hermitian_eigen(m);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&x| C64::new(x.max(0.0).sqrt(), 0.0)),
    ));
    &vecs * d * vecs.adjoint()
}

pub(crate) fn submatrix(m: &DMatrix<C64>, idx: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Connected components of the union of the nonzero patterns.
pub(crate) fn components(ms: &[&DMatrix<C64>]) -> Vec<Vec<usize>> {
    let n = ms[0].nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let zero = C64::new(0.0, 0.0);
    for m in ms {
        for j in 0..n {
            for i in (j + 1)..n {
                if m[(i, j)] != zero {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}
