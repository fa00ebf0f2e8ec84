//! Sparse complex matrices and the Krylov solvers built on a sparse LU.

use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Side};

use crate::{Error, Result, C64};

/// Compressed sparse row matrix over `C64`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<C64>,
}

impl CsrMatrix {
    /// Assembles from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix { nrows, ncols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix::diagonal(&vec![C64::new(1.0, 0.0); n])
    }

    pub fn diagonal(d: &[C64]) -> Self {
        let n = d.len();
        CsrMatrix { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), values: d.to_vec() }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r).filter(|(j, _)| *j == c).map(|(_, v)| v).sum()
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `A* x`.
    pub fn matvec_adjoint(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![C64::new(0.0, 0.0); self.ncols];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                y[c] += v.conj() * x[r];
            }
        }
        y
    }

    pub fn adjoint(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push((c, r, v.conj()));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, t)
    }

    /// `diag(left) · A · diag(right)`.
    pub fn scale(&self, left: &[f64], right: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] *= left[r] * right[self.indices[k]];
            }
        }
        out
    }

    /// `A + diag(d)`.
    pub fn add_diagonal(&self, d: &[C64]) -> CsrMatrix {
        let mut t = self.triplets();
        t.extend(d.iter().enumerate().map(|(i, v)| (i, i, *v)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, t)
    }

    /// `A - z I`.
    pub fn shifted(&self, z: C64) -> CsrMatrix {
        self.add_diagonal(&vec![-z; self.nrows])
    }

    pub fn triplets(&self) -> Vec<(usize, usize, C64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            t.extend(self.row(r).map(|(c, v)| (r, c, v)));
        }
        t
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Largest `|A_ij - conj(A_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// Frobenius-type bound on the operator norm: `sqrt(max row sum · max column sum)`.
    pub fn norm_bound(&self) -> f64 {
        let mut rows = 0.0f64;
        let mut cols = vec![0.0f64; self.ncols];
        for r in 0..self.nrows {
            let mut s = 0.0;
            for (c, v) in self.row(r) {
                s += v.norm();
                cols[c] += v.norm();
            }
            rows = rows.max(s);
        }
        (rows * cols.into_iter().fold(0.0, f64::max)).sqrt()
    }
}

pub fn vdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vnorm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Sparse LU factorization of a square matrix.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, C64>,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Shape { expected: a.nrows, got: a.ncols });
        }
        let t: Vec<Triplet<usize, usize, C64>> =
            a.triplets().into_iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let m = SparseColMat::<usize, C64>::try_new_from_triplets(a.nrows, a.ncols, &t)
            .map_err(|e| Error::Singular(format!("assembly: {e:?}")))?;
        let lu = m.sp_lu().map_err(|e| Error::Singular(format!("{e:?}")))?;
        let out = SparseLu { n: a.nrows, lu };
        // A singular matrix can still factor with zero pivots; probe for non-finite output.
        let probe = out.solve(&vec![C64::new(1.0, 0.0); out.n]);
        if probe.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Singular("non-finite solve".into()));
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut m = Mat::<C64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place_with_conj(Conj::No, m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    /// `A⁻* b`.
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let mut m = Mat::<C64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_transpose_in_place_with_conj(Conj::Yes, m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

fn start_vector(n: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..n)
        .map(|j| {
            let t = j as f64;
            C64::new(1.0 + 0.5 * (1.7 * t + 0.3).sin(), 0.3 * (0.9 * t).cos())
        })
        .collect();
    let s = vnorm(&v);
    v.into_iter().map(|x| x / s).collect()
}

fn orthogonalize(v: &mut [C64], basis: &[Vec<C64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = vdot(q, v);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularEstimate {
    pub sigma_min: f64,
    /// Backward error `‖M* u - σ v‖ / ‖M‖` of the returned singular triplet.
    pub residual: f64,
    pub iterations: usize,
    pub method: &'static str,
}

/// Smallest singular value of a sparse square matrix by Lanczos on
/// `M⁻* M⁻¹` (full reorthogonalization), using one sparse LU.
pub fn smallest_singular_value(m: &CsrMatrix, tol: f64, max_iter: usize) -> Result<SingularEstimate> {
    let lu = SparseLu::new(m)?;
    let n = lu.dim();
    let apply = |x: &[C64]| lu.solve_adjoint(&lu.solve(x));
    let mut basis: Vec<Vec<C64>> = vec![start_vector(n)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let max_iter = max_iter.min(n);
    let mut best = (0.0, f64::INFINITY, Vec::new());
    let mut ritz_tol = tol;
    for k in 0..max_iter {
        let mut w = apply(&basis[k]);
        if w.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Singular("non-finite Lanczos iterate".into()));
        }
        alpha.push(vdot(&basis[k], &w).re);
        orthogonalize(&mut w, &basis);
        let b = vnorm(&w);
        let kk = k + 1;
        let t = Mat::<f64>::from_fn(kk, kk, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j || j + 1 == i {
                beta[i.min(j)]
            } else {
                0.0
            }
        });
        let eig = t.self_adjoint_eigen(Side::Lower).map_err(|e| Error::NoConvergence(format!("{e:?}")))?;
        let theta = eig.S().column_vector()[kk - 1];
        let s_last = eig.U()[(kk - 1, kk - 1)];
        let res = b * s_last.abs() / theta.abs().max(f64::MIN_POSITIVE);
        if res < best.1 {
            let coeffs: Vec<f64> = (0..kk).map(|i| eig.U()[(i, kk - 1)]).collect();
            best = (theta, res, coeffs);
        }
        if b <= 1e-300 * theta.abs() || kk == n {
            return finish(m, &lu, &basis, best, kk);
        }
        if res <= ritz_tol {
            // Ritz values converge faster than vectors; tighten until the pair itself is accurate.
            let est = finish(m, &lu, &basis, best.clone(), kk)?;
            if est.residual <= tol.max(1e-13) || ritz_tol < 1e-15 {
                return Ok(est);
            }
            ritz_tol *= 1e-2;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    finish(m, &lu, &basis, best, max_iter)
}

fn finish(
    m: &CsrMatrix,
    lu: &SparseLu,
    basis: &[Vec<C64>],
    best: (f64, f64, Vec<f64>),
    iterations: usize,
) -> Result<SingularEstimate> {
    let (theta, _, coeffs) = best;
    let n = m.nrows;
    let mut y = vec![C64::new(0.0, 0.0); n];
    for (q, c) in basis.iter().zip(&coeffs) {
        y.iter_mut().zip(q).for_each(|(a, b)| *a += *c * b);
    }
    // y is the left singular vector of M⁻¹ for σ_max; v = M⁻¹ y / ‖·‖.
    let mut v = lu.solve(&y);
    let sigma_ritz = 1.0 / theta.sqrt();
    let (mut sigma, mut r) = (f64::INFINITY, f64::INFINITY);
    for step in 0..4 {
        let nv = vnorm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mv = m.matvec(&v);
        sigma = vnorm(&mv);
        let mhu = m.matvec_adjoint(&mv.iter().map(|x| x / sigma).collect::<Vec<_>>());
        r = mhu.iter().zip(&v).map(|(a, b)| (a - sigma * b).norm_sqr()).sum::<f64>().sqrt();
        if r <= 1e-12 * m.norm_bound() || step == 3 {
            break;
        }
        v = lu.solve(&lu.solve_adjoint(&v));
    }
    Ok(SingularEstimate {
        sigma_min: sigma.min(sigma_ritz),
        residual: r / m.norm_bound().max(f64::MIN_POSITIVE),
        iterations,
        method: "lanczos-shift-invert",
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormEstimate {
    pub norm: f64,
    /// Relative Ritz residual of the top eigenpair of `A*A`.
    pub residual: f64,
    pub iterations: usize,
}

/// Largest singular value of a matrix-free operator by Lanczos on `A*A`.
pub fn largest_singular_value(
    n: usize,
    apply: &dyn Fn(&[C64]) -> Vec<C64>,
    apply_adjoint: &dyn Fn(&[C64]) -> Vec<C64>,
    tol: f64,
    max_iter: usize,
) -> Result<NormEstimate> {
    if n == 0 {
        return Ok(NormEstimate { norm: 0.0, residual: 0.0, iterations: 0 });
    }
    let mut basis: Vec<Vec<C64>> = vec![start_vector(n)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let max_iter = max_iter.min(n);
    let mut last = (0.0, f64::INFINITY);
    for k in 0..max_iter {
        let mut w = apply_adjoint(&apply(&basis[k]));
        if w.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Singular("non-finite Lanczos iterate".into()));
        }
        alpha.push(vdot(&basis[k], &w).re);
        orthogonalize(&mut w, &basis);
        let b = vnorm(&w);
        let kk = k + 1;
        let t = Mat::<f64>::from_fn(kk, kk, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j || j + 1 == i {
                beta[i.min(j)]
            } else {
                0.0
            }
        });
        let eig = t.self_adjoint_eigen(Side::Lower).map_err(|e| Error::NoConvergence(format!("{e:?}")))?;
        let theta = eig.S().column_vector()[kk - 1];
        if theta <= 0.0 && b <= 1e-300 {
            return Ok(NormEstimate { norm: 0.0, residual: 0.0, iterations: kk });
        }
        let res = b * eig.U()[(kk - 1, kk - 1)].abs() / theta.abs().max(f64::MIN_POSITIVE);
        last = (theta, res);
        if res <= tol || b <= 1e-14 * theta.abs() || kk == n {
            return Ok(NormEstimate { norm: theta.max(0.0).sqrt(), residual: res.min(1.0), iterations: kk });
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    Ok(NormEstimate { norm: last.0.max(0.0).sqrt(), residual: last.1, iterations: max_iter })
}

/// Smallest singular value of a dense matrix by full SVD.
pub fn dense_sigma_min(m: &Mat<C64>) -> Result<f64> {
    let s = m.singular_values().map_err(|e| Error::NoConvergence(format!("{e:?}")))?;
    Ok(s.into_iter().fold(f64::INFINITY, f64::min))
}

/// Dense inverse of a square matrix via partial-pivot LU.
pub fn dense_inverse(m: &Mat<C64>) -> Mat<C64> {
    let lu = m.partial_piv_lu();
    let mut id = Mat::<C64>::identity(m.nrows(), m.ncols());
    lu.solve_in_place_with_conj(Conj::No, id.as_mut());
    id
}

/// Largest singular value of a dense matrix.
pub fn dense_norm(m: &Mat<C64>) -> Result<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let s = m.singular_values().map_err(|e| Error::NoConvergence(format!("{e:?}")))?;
    Ok(s.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RitzPair {
    pub value: C64,
    pub vector: Vec<C64>,
    /// `‖A y - λ y‖ / max(1, |λ|)` with `‖y‖ = 1`.
    pub residual: f64,
}

/// Eigenpairs of `a` nearest `shift` by shift-invert Arnoldi with `krylov_dim` steps.
pub fn shift_invert_arnoldi(a: &CsrMatrix, shift: C64, krylov_dim: usize) -> Result<Vec<RitzPair>> {
    let lu = SparseLu::new(&a.shifted(shift))?;
    let n = lu.dim();
    let m = krylov_dim.min(n).max(1);
    let mut basis: Vec<Vec<C64>> = vec![start_vector(n)];
    let mut hess = Mat::<C64>::zeros(m + 1, m);
    let mut steps = m;
    for k in 0..m {
        let mut w = lu.solve(&basis[k]);
        for _ in 0..2 {
            for (j, q) in basis.iter().enumerate() {
                let c = vdot(q, &w);
                hess[(j, k)] += c;
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = vnorm(&w);
        hess[(k + 1, k)] = C64::new(b, 0.0);
        if b < 1e-14 * hess[(k, k)].norm().max(1e-300) {
            steps = k + 1;
            break;
        }
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    let h = Mat::<C64>::from_fn(steps, steps, |i, j| hess[(i, j)]);
    let eig = h.eigen().map_err(|e| Error::NoConvergence(format!("Hessenberg eigen: {e:?}")))?;
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let theta = eig.S().column_vector()[k];
        if theta.norm() < 1e-300 {
            continue;
        }
        let lambda = shift + C64::new(1.0, 0.0) / theta;
        let mut y = vec![C64::new(0.0, 0.0); n];
        for j in 0..steps {
            let c = eig.U()[(j, k)];
            y.iter_mut().zip(&basis[j]).for_each(|(a, b)| *a += c * b);
        }
        let ny = vnorm(&y);
        y.iter_mut().for_each(|x| *x /= ny);
        let ay = a.matvec(&y);
        let r: f64 = ay.iter().zip(&y).map(|(p, q)| (p - lambda * q).norm_sqr()).sum::<f64>().sqrt();
        out.push(RitzPair { value: lambda, vector: y, residual: r / lambda.norm().max(1.0) });
    }
    out.sort_by(|p, q| (p.value - shift).norm().total_cmp(&(q.value - shift).norm()));
    Ok(out)
}
