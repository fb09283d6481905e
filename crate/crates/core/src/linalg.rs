//! Small dense linear algebra over generic scalars.
//!
//! The plants here have a handful of states, so everything is written for
//! clarity and robustness at small `n` rather than asymptotic speed:
//! Gaussian elimination with partial pivoting, cyclic Jacobi for symmetric
//! eigenvalues (spectral norms), and a complex shifted-QR iteration for the
//! general eigendecomposition. The eigendecomposition is returned in *real
//! block* form `A = U L U^-1` where `L` is block diagonal with 1x1 blocks for
//! real eigenvalues and 2x2 rotation-scaling blocks `[[a, b], [-b, a]]` for
//! complex pairs `a ± bi`; the 2-norm of such a block is exactly `|a + bi|`.

use crate::scalar::Real;
use ndarray::{Array1, Array2};
use num_complex::Complex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is singular (pivot {pivot:e} below tolerance)")]
    Singular { pivot: f64 },
    #[error("eigenvalue iteration failed to converge")]
    NoConvergence,
    #[error("matrix is not diagonalizable (similarity residual {residual:e})")]
    NotDiagonalizable { residual: f64 },
    #[error("non-finite entry encountered")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Frobenius norm.
pub fn fro_norm<T: Real>(a: &Array2<T>) -> T {
    a.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Euclidean norm of a vector.
pub fn vec_norm<T: Real>(v: &Array1<T>) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub fn all_finite<T: Real>(a: &Array2<T>) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(LinalgError::Dimension(format!(
            "solve: a is {}x{}, b is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let m = b.ncols();
    let mut lu = a.clone();
    let mut rhs = b.clone();
    let scale = fro_norm(a).max(T::one());
    let tol = T::epsilon() * scale * T::from_f64_lossy(n as f64);

    for k in 0..n {
        // Pivot on the largest remaining entry in column k.
        let mut piv = k;
        let mut piv_val = lu[[k, k]].abs();
        for i in (k + 1)..n {
            if lu[[i, k]].abs() > piv_val {
                piv = i;
                piv_val = lu[[i, k]].abs();
            }
        }
        if piv_val <= tol {
            return Err(LinalgError::Singular {
                pivot: piv_val.to_f64().unwrap_or(0.0),
            });
        }
        if piv != k {
            for j in 0..n {
                lu.swap([k, j], [piv, j]);
            }
            for j in 0..m {
                rhs.swap([k, j], [piv, j]);
            }
        }
        for i in (k + 1)..n {
            let f = lu[[i, k]] / lu[[k, k]];
            if f != T::zero() {
                for j in k..n {
                    let v = lu[[k, j]];
                    lu[[i, j] ] = lu[[i, j]] - f * v;
                }
                for j in 0..m {
                    let v = rhs[[k, j]];
                    rhs[[i, j]] = rhs[[i, j]] - f * v;
                }
            }
        }
    }
    // Back substitution.
    for j in 0..m {
        for i in (0..n).rev() {
            let mut s = rhs[[i, j]];
            for k in (i + 1)..n {
                s = s - lu[[i, k]] * rhs[[k, j]];
            }
            rhs[[i, j]] = s / lu[[i, i]];
        }
    }
    Ok(rhs)
}

pub fn inverse<T: Real>(a: &Array2<T>) -> Result<Array2<T>> {
    solve(a, &Array2::eye(a.nrows()))
}

/// Rank of a rectangular matrix by row elimination with partial pivoting.
pub fn rank<T: Real>(a: &Array2<T>) -> usize {
    let (n, m) = (a.nrows(), a.ncols());
    let mut w = a.clone();
    let scale = fro_norm(a).max(T::one());
    let tol = T::epsilon() * scale * T::from_f64_lossy((n.max(m)) as f64 * 8.0);
    let mut r = 0;
    for col in 0..m {
        if r == n {
            break;
        }
        let mut piv = r;
        let mut piv_val = w[[r, col]].abs();
        for i in (r + 1)..n {
            if w[[i, col]].abs() > piv_val {
                piv = i;
                piv_val = w[[i, col]].abs();
            }
        }
        if piv_val <= tol {
            continue;
        }
        if piv != r {
            for j in 0..m {
                w.swap([r, j], [piv, j]);
            }
        }
        for i in (r + 1)..n {
            let f = w[[i, col]] / w[[r, col]];
            for j in col..m {
                let v = w[[r, j]];
                w[[i, j]] = w[[i, j]] - f * v;
            }
        }
        r += 1;
    }
    r
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues<T: Real>(s: &Array2<T>) -> Result<Vec<T>> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(LinalgError::Dimension("symmetric_eigenvalues".into()));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    // Symmetrize to wash out formation roundoff.
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] = (s[[i, j]] + s[[j, i]]) / T::from_f64_lossy(2.0);
        }
    }
    let scale = fro_norm(&a).max(T::one());
    let tol = T::epsilon() * scale;
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            let mut ev: Vec<T> = (0..n).map(|i| a[[i, i]]).collect();
            ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
            return Ok(ev);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= tol * T::from_f64_lossy(1e-2) {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (T::from_f64_lossy(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sn * akq;
                    a[[k, q]] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - sn * aqk;
                    a[[q, k]] = sn * apk + c * aqk;
                }
            }
        }
    }
    Err(LinalgError::NoConvergence)
}

/// Spectral (2-) norm: square root of the largest eigenvalue of `AᵀA`.
pub fn spectral_norm<T: Real>(a: &Array2<T>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    let ata = a.t().dot(a);
    let ev = symmetric_eigenvalues(&ata).expect("Jacobi on a Gram matrix converges");
    ev.first().copied().unwrap_or(T::zero()).max(T::zero()).sqrt()
}

/// Spectral norm of a vector treated as an n x 1 matrix (= Euclidean norm).
pub fn spectral_radius_of_eigs<T: Real>(eigs: &[Complex<T>]) -> T {
    eigs.iter()
        .map(|l| l.norm())
        .fold(T::zero(), |acc, x| acc.max(x))
}

/// Real block eigendecomposition `A = U L U^-1`.
#[derive(Debug, Clone)]
pub struct BlockEig<T: Real> {
    pub u: Array2<T>,
    pub u_inv: Array2<T>,
    /// Block diagonal: 1x1 real blocks and 2x2 `[[a, b], [-b, a]]` blocks.
    pub l: Array2<T>,
    pub eigenvalues: Vec<Complex<T>>,
    /// `‖A − U L U^-1‖_F / max(1, ‖A‖_F)` achieved by the factors.
    pub residual: T,
}

impl<T: Real> BlockEig<T> {
    /// Largest eigenvalue modulus.
    pub fn spectral_radius(&self) -> T {
        spectral_radius_of_eigs(&self.eigenvalues)
    }
}

/// Computes the real block eigendecomposition of a square real matrix.
///
/// Fails with [`LinalgError::NotDiagonalizable`] when no well-conditioned
/// similarity to block-diagonal form exists (defective or numerically
/// defective input).
pub fn block_eig<T: Real>(a: &Array2<T>) -> Result<BlockEig<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::Dimension("block_eig: not square".into()));
    }
    if !all_finite(a) {
        return Err(LinalgError::NonFinite);
    }
    if n == 0 {
        return Err(LinalgError::Dimension("block_eig: empty".into()));
    }
    if n == 1 {
        return Ok(BlockEig {
            u: Array2::eye(1),
            u_inv: Array2::eye(1),
            l: a.clone(),
            eigenvalues: vec![Complex::new(a[[0, 0]], T::zero())],
            residual: T::zero(),
        });
    }

    let (tmat, q) = complex_schur(a)?;
    let eigs: Vec<Complex<T>> = (0..n).map(|i| tmat[[i, i]]).collect();
    let vectors = triangular_eigenvectors(&tmat, &q);

    // Realify: one column per real eigenvalue, two per complex pair (the
    // member with positive imaginary part carries the pair).
    let scale = eigs
        .iter()
        .map(|l| l.norm())
        .fold(T::one(), |acc, x| acc.max(x));
    let im_tol = T::epsilon().sqrt() * scale;
    let mut u = Array2::<T>::zeros((n, n));
    let mut l = Array2::<T>::zeros((n, n));
    let mut eigenvalues = Vec::with_capacity(n);
    let mut col = 0usize;
    for (k, lam) in eigs.iter().enumerate() {
        if lam.im.abs() <= im_tol {
            if col >= n {
                return Err(LinalgError::NotDiagonalizable { residual: 1.0 });
            }
            // Phase-align so the dominant component is real, then take Re.
            let v = &vectors[k];
            let mut best = 0;
            let mut best_mag = T::zero();
            for (i, c) in v.iter().enumerate() {
                if c.norm() > best_mag {
                    best_mag = c.norm();
                    best = i;
                }
            }
            let phase = v[best] / Complex::new(best_mag, T::zero());
            let mut re = Array1::<T>::zeros(n);
            for i in 0..n {
                re[i] = (v[i] * phase.conj()).re;
            }
            let nrm = vec_norm(&re);
            if nrm <= T::epsilon() {
                return Err(LinalgError::NotDiagonalizable { residual: 1.0 });
            }
            for i in 0..n {
                u[[i, col]] = re[i] / nrm;
            }
            l[[col, col]] = lam.re;
            eigenvalues.push(Complex::new(lam.re, T::zero()));
            col += 1;
        } else if lam.im > T::zero() {
            if col + 1 >= n {
                return Err(LinalgError::NotDiagonalizable { residual: 1.0 });
            }
            let v = &vectors[k];
            let mut re = Array1::<T>::zeros(n);
            let mut im = Array1::<T>::zeros(n);
            for i in 0..n {
                re[i] = v[i].re;
                im[i] = v[i].im;
            }
            let nrm = (vec_norm(&re) * vec_norm(&re) + vec_norm(&im) * vec_norm(&im)).sqrt();
            if nrm <= T::epsilon() {
                return Err(LinalgError::NotDiagonalizable { residual: 1.0 });
            }
            for i in 0..n {
                u[[i, col]] = re[i] / nrm;
                u[[i, col + 1]] = im[i] / nrm;
            }
            l[[col, col]] = lam.re;
            l[[col, col + 1]] = lam.im;
            l[[col + 1, col]] = -lam.im;
            l[[col + 1, col + 1]] = lam.re;
            eigenvalues.push(*lam);
            eigenvalues.push(lam.conj());
            col += 2;
        }
        // Negative-imaginary members are the conjugates; skipped.
    }
    if col != n {
        return Err(LinalgError::NotDiagonalizable { residual: 1.0 });
    }

    let u_inv = inverse(&u).map_err(|_| LinalgError::NotDiagonalizable { residual: 1.0 })?;
    let recon = u.dot(&l).dot(&u_inv);
    let denom = fro_norm(a).max(T::one());
    let residual = fro_norm(&(a - &recon)) / denom;
    let tol = T::epsilon().sqrt() * T::from_f64_lossy(64.0);
    if residual > tol {
        return Err(LinalgError::NotDiagonalizable {
            residual: residual.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(BlockEig {
        u,
        u_inv,
        l,
        eigenvalues,
        residual,
    })
}

type CMat<T> = Array2<Complex<T>>;

/// Complex Schur form `A = Q T Q^H` (T upper triangular) of a real matrix,
/// via Hessenberg reduction and Wilkinson-shifted QR with Givens rotations.
fn complex_schur<T: Real>(a: &Array2<T>) -> Result<(CMat<T>, CMat<T>)> {
    let n = a.nrows();
    let mut h: CMat<T> = a.mapv(|x| Complex::new(x, T::zero()));
    let mut q: CMat<T> = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            Complex::new(T::one(), T::zero())
        } else {
            Complex::new(T::zero(), T::zero())
        }
    });

    hessenberg_in_place(&mut h, &mut q);

    let scale = h
        .iter()
        .map(|c| c.norm())
        .fold(T::one(), |acc, x| acc.max(x));
    let eps = T::epsilon();
    let mut hi = n - 1;
    let mut iter_since_deflation = 0usize;
    let mut total_iters = 0usize;
    let max_total = 60 * n.max(4);

    loop {
        // Zero negligible subdiagonals.
        for i in 0..hi {
            let d = h[[i, i]].norm() + h[[i + 1, i + 1]].norm();
            let d = if d == T::zero() { scale } else { d };
            if h[[i + 1, i]].norm() <= eps * d {
                h[[i + 1, i]] = Complex::new(T::zero(), T::zero());
            }
        }
        // Deflate converged trailing eigenvalues.
        while hi > 0 && h[[hi, hi - 1]].norm() == T::zero() {
            hi -= 1;
            iter_since_deflation = 0;
        }
        if hi == 0 {
            break;
        }
        // Active window [lo, hi].
        let mut lo = hi;
        while lo > 0 && h[[lo, lo - 1]].norm() != T::zero() {
            lo -= 1;
        }

        total_iters += 1;
        iter_since_deflation += 1;
        if total_iters > max_total {
            return Err(LinalgError::NoConvergence);
        }

        // Wilkinson shift from the trailing 2x2 of the window, with an
        // occasional exceptional shift to break symmetry stalls.
        let mu = if iter_since_deflation % 12 == 0 {
            let m = h[[hi, hi - 1]].norm() + if hi >= 2 { h[[hi - 1, hi - 2]].norm() } else { T::zero() };
            h[[hi, hi]] + Complex::new(m, T::zero())
        } else {
            wilkinson_shift(
                h[[hi - 1, hi - 1]],
                h[[hi - 1, hi]],
                h[[hi, hi - 1]],
                h[[hi, hi]],
            )
        };

        // One explicit shifted QR sweep on the window via Givens rotations.
        let mut x = h[[lo, lo]] - mu;
        let mut z = h[[lo + 1, lo]];
        for k in lo..hi {
            let (c, s) = givens(x, z);
            apply_givens_left(&mut h, k, k + 1, c, s);
            apply_givens_right(&mut h, k, k + 1, c, s);
            apply_givens_right(&mut q, k, k + 1, c, s);
            if k + 1 < hi {
                x = h[[k + 1, k]];
                z = h[[k + 2, k]];
            }
        }
    }
    Ok((h, q))
}

/// Reduces `h` to upper Hessenberg form by Givens rotations, accumulating the
/// similarity transform into `q`.
fn hessenberg_in_place<T: Real>(h: &mut CMat<T>, q: &mut CMat<T>) {
    let n = h.nrows();
    for col in 0..n.saturating_sub(2) {
        for row in (col + 2..n).rev() {
            let x = h[[row - 1, col]];
            let z = h[[row, col]];
            if z.norm() == T::zero() {
                continue;
            }
            let (c, s) = givens(x, z);
            apply_givens_left(h, row - 1, row, c, s);
            apply_givens_right(h, row - 1, row, c, s);
            apply_givens_right(q, row - 1, row, c, s);
        }
    }
}

/// Rotation `[[c̄, s̄], [-s, c]]` with `|c|²+|s|²=1` mapping `(x, z)` to `(r, 0)`.
fn givens<T: Real>(x: Complex<T>, z: Complex<T>) -> (Complex<T>, Complex<T>) {
    let r = (x.norm_sqr() + z.norm_sqr()).sqrt();
    if r == T::zero() {
        (
            Complex::new(T::one(), T::zero()),
            Complex::new(T::zero(), T::zero()),
        )
    } else {
        let rr = Complex::new(r, T::zero());
        (x / rr, z / rr)
    }
}

fn apply_givens_left<T: Real>(
    m: &mut CMat<T>,
    i: usize,
    j: usize,
    c: Complex<T>,
    s: Complex<T>,
) {
    let ncols = m.ncols();
    for col in 0..ncols {
        let a = m[[i, col]];
        let b = m[[j, col]];
        m[[i, col]] = c.conj() * a + s.conj() * b;
        m[[j, col]] = -s * a + c * b;
    }
}

fn apply_givens_right<T: Real>(
    m: &mut CMat<T>,
    i: usize,
    j: usize,
    c: Complex<T>,
    s: Complex<T>,
) {
    let nrows = m.nrows();
    for row in 0..nrows {
        let a = m[[row, i]];
        let b = m[[row, j]];
        m[[row, i]] = a * c + b * s;
        m[[row, j]] = -a * s.conj() + b * c.conj();
    }
}

/// Eigenvalue of `[[a, b], [c, d]]` nearest `d`.
fn wilkinson_shift<T: Real>(
    a: Complex<T>,
    b: Complex<T>,
    c: Complex<T>,
    d: Complex<T>,
) -> Complex<T> {
    let two = Complex::new(T::from_f64_lossy(2.0), T::zero());
    let tr = a + d;
    let disc = ((a - d) * (a - d) + two * two * b * c).sqrt();
    let l1 = (tr + disc) / two;
    let l2 = (tr - disc) / two;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Eigenvectors of `A = Q T Q^H` by back substitution on the triangular `T`.
fn triangular_eigenvectors<T: Real>(tmat: &CMat<T>, q: &CMat<T>) -> Vec<Array1<Complex<T>>> {
    let n = tmat.nrows();
    let scale = tmat
        .iter()
        .map(|c| c.norm())
        .fold(T::one(), |acc, x| acc.max(x));
    let smlnum = T::epsilon() * scale;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let lam = tmat[[k, k]];
        let mut y: Array1<Complex<T>> = Array1::from_elem(n, Complex::new(T::zero(), T::zero()));
        y[k] = Complex::new(T::one(), T::zero());
        for i in (0..k).rev() {
            let mut num = Complex::new(T::zero(), T::zero());
            for j in (i + 1)..=k {
                num = num + tmat[[i, j]] * y[j];
            }
            let mut den = tmat[[i, i]] - lam;
            if den.norm() < smlnum {
                den = Complex::new(smlnum, T::zero());
            }
            y[i] = -num / den;
        }
        // v = Q y, normalized.
        let mut v: Array1<Complex<T>> = Array1::from_elem(n, Complex::new(T::zero(), T::zero()));
        for i in 0..n {
            let mut s = Complex::new(T::zero(), T::zero());
            for j in 0..n {
                s = s + q[[i, j]] * y[j];
            }
            v[i] = s;
        }
        let nrm = v.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
        if nrm > T::zero() {
            let nrm = Complex::new(nrm, T::zero());
            v.mapv_inplace(|c| c / nrm);
        }
        out.push(v);
    }
    out
}

/// Controllability matrix `[B, AB, ..., A^{n-1} B]`.
pub fn controllability_matrix<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = Array2::zeros((n, n * m));
    let mut block = b.clone();
    for k in 0..n {
        for i in 0..n {
            for j in 0..m {
                c[[i, k * m + j]] = block[[i, j]];
            }
        }
        block = a.dot(&block);
    }
    c
}

/// Monic polynomial coefficients `[c_0, ..., c_{n-1}]` of `Π (z - r_i)`.
pub fn poly_from_roots<T: Real>(roots: &[T]) -> Vec<T> {
    let mut c = vec![T::one()];
    for &r in roots {
        let mut next = vec![T::zero(); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i + 1] = next[i + 1] + ci;
            next[i] = next[i] - r * ci;
        }
        c = next;
    }
    c.pop(); // drop the leading 1
    c
}

/// Evaluates the monic polynomial with low-order coefficients `coeffs` at `A`.
pub fn mat_poly_eval<T: Real>(a: &Array2<T>, coeffs: &[T]) -> Array2<T> {
    let n = a.nrows();
    let mut p: Array2<T> = Array2::eye(n); // z^n term, built by Horner
    for &c in coeffs.iter().rev() {
        p = p.dot(a) + &(Array2::<T>::eye(n) * c);
    }
    p
}
