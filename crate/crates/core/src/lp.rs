//! Small linear programs of the solver: few variables, many inequality rows.
//!
//! Primal active-set method. Every step re-solves its small systems from the
//! original rows, so rounding does not accumulate over iterations; this
//! matters because Poisson columns are close to a Vandermonde matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_ITER: usize = 10_000;
const RANK_TOL: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rows of the working set, the normalization row first.
fn working_matrix(rows: &[Vec<f64>], active: &[usize], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(active.len() + 1, k);
    for j in 0..k {
        m[(0, j)] = 1.0;
    }
    for (r, &i) in active.iter().enumerate() {
        for j in 0..k {
            m[(r + 1, j)] = rows[i][j];
        }
    }
    m
}

/// Orthonormal basis of the row space of `m`, one vector per column.
fn row_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.transpose().svd(true, false);
    let u = svd.u.expect("requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > RANK_TOL * smax.max(1.0)).collect();
    DMatrix::from_fn(u.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Least-squares solution of `m x = b`.
fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, RANK_TOL * smax.max(1.0)).expect("both factors computed")
}

/// Maximizes `g.c` over free `c` with `rows . c >= 0` and `sum(c) = 1`.
///
/// Needs a variable whose column is nonnegative in every row; it is used as
/// the feasible start.
pub(crate) fn maximize_on_normalized_cone(g: &[f64], rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = g.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::dims(k, rows.first().map_or(0, Vec::len)));
    }
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .filter_map(|r| {
            let s = r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            (s > 0.0).then(|| r.iter().map(|x| x / s).collect())
        })
        .collect();
    let start = (0..k)
        .filter(|&j| rows.iter().all(|r| r[j] >= 0.0))
        .max_by(|&a, &b| g[a].total_cmp(&g[b]).then(b.cmp(&a)))
        .ok_or(Error::Infeasible)?;
    let mut c = vec![0.0; k];
    c[start] = 1.0;

    let gscale = g.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let gvec = DVector::from_column_slice(g);
    let mut active: Vec<usize> = Vec::new();
    for _ in 0..MAX_ITER {
        let m = working_matrix(&rows, &active, k);
        // pull c back onto the working constraints
        let mut rhs = DVector::zeros(active.len() + 1);
        rhs[0] = 1.0;
        let cv = DVector::from_column_slice(&c);
        let fix = lstsq(&m, &(&m * &cv - &rhs));
        c.iter_mut().zip(fix.iter()).for_each(|(x, d)| *x -= d);

        let basis = row_space(&m);
        let p = &gvec - &basis * (basis.transpose() * &gvec);
        let pnorm = p.norm();
        if pnorm > 1e-13 * gscale {
            let p = p.as_slice();
            let mut block: Option<(f64, usize)> = None;
            for (i, r) in rows.iter().enumerate() {
                if active.contains(&i) {
                    continue;
                }
                let rp = dot(r, p);
                if rp < -1e-14 * pnorm {
                    let t = dot(r, &c).max(0.0) / -rp;
                    if block.is_none_or(|(bt, _)| t < bt) {
                        block = Some((t, i));
                    }
                }
            }
            let Some((t, i)) = block else {
                return Err(Error::Numerical("linear program unbounded".into()));
            };
            c.iter_mut().zip(p).for_each(|(x, d)| *x += t * d);
            active.push(i);
            continue;
        }
        // stationary on the working set: drop the first row with a wrong-sign multiplier
        let mult = lstsq(&m.transpose(), &gvec);
        let tol = 1e-10 * gscale;
        let drop = (0..active.len()).filter(|&r| mult[r + 1] > tol).min_by_key(|&r| active[r]);
        match drop {
            Some(r) => {
                active.remove(r);
            }
            None => {
                if active.len() + 1 == k {
                    if let Some(x) = m.lu().solve(&rhs) {
                        if x.iter().all(|v| v.is_finite()) {
                            c = x.iter().copied().collect();
                        }
                    }
                }
                return Ok(c);
            }
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITER })
}
