//! Dense complex linear-algebra helpers shared across the workbench.
//!
//! Everything here operates on small dense matrices (state dimensions are a
//! handful, discretized operators stay below ~2000). The only nonstandard
//! pieces are the reordered complex Schur decomposition, which underlies every
//! invariant-subspace computation, and triangular eigenvector extraction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Lifts a real matrix into the complex field.
pub fn complexify(a: &RMat) -> CMat {
    a.map(|x| Complex64::new(x, 0.0))
}

/// Complex Schur decomposition a = q t q^H with t upper triangular.
///
/// The QR iteration deflates a subdiagonal entry only when it is small
/// relative to its diagonal neighbors, so clusters of near-zero eigenvalues
/// can stall it. Retries under a complex diagonal shift, which moves the
/// whole diagonal away from zero and leaves the Schur vectors unchanged.
pub fn schur(a: &CMat) -> (CMat, CMat) {
    let n = a.nrows();
    if let Some(s) = a.clone().try_schur(f64::EPSILON, 100 * n.max(20)) {
        return s.unpack();
    }
    let scale = a.norm() / (n as f64).sqrt();
    for &(re, im) in &[(1.0, 0.7), (-0.6, 1.3)] {
        let shift = Complex64::new(re, im) * scale;
        let shifted = a + CMat::identity(n, n) * shift;
        if let Some(s) = shifted.try_schur(f64::EPSILON, 100 * n.max(20)) {
            let (q, mut t) = s.unpack();
            for i in 0..n {
                t[(i, i)] -= shift;
            }
            return (q, t);
        }
    }
    let s = a
        .clone()
        .try_schur(1e-12, 1_000 * n.max(20))
        .expect("schur iteration failed to converge");
    s.unpack()
}

/// Unitarily swaps the adjacent diagonal entries i, i+1 of the upper
/// triangular t, updating q accordingly. Exact eigenvalue ties are left alone.
fn schur_swap(q: &mut CMat, t: &mut CMat, i: usize) {
    let a = t[(i, i)];
    let b = t[(i, i + 1)];
    let c = t[(i + 1, i + 1)];
    // Eigenvector of [[a, b], [0, c]] for eigenvalue c.
    let v0 = b;
    let v1 = c - a;
    let nrm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
    if nrm == 0.0 {
        return;
    }
    let (v0, v1) = (v0 / nrm, v1 / nrm);
    // g is the 2x2 unitary [v, v_perp].
    let g = nalgebra::Matrix2::new(v0, -v1.conj(), v1, v0.conj());
    let n = t.nrows();
    // t := g^H t g on the affected rows/columns.
    for col in i..n {
        let x = t[(i, col)];
        let y = t[(i + 1, col)];
        t[(i, col)] = g[(0, 0)].conj() * x + g[(1, 0)].conj() * y;
        t[(i + 1, col)] = g[(0, 1)].conj() * x + g[(1, 1)].conj() * y;
    }
    for row in 0..=(i + 1) {
        let x = t[(row, i)];
        let y = t[(row, i + 1)];
        t[(row, i)] = x * g[(0, 0)] + y * g[(1, 0)];
        t[(row, i + 1)] = x * g[(0, 1)] + y * g[(1, 1)];
    }
    t[(i + 1, i)] = ZERO;
    t[(i, i)] = c;
    t[(i + 1, i + 1)] = a;
    for row in 0..n {
        let x = q[(row, i)];
        let y = q[(row, i + 1)];
        q[(row, i)] = x * g[(0, 0)] + y * g[(1, 0)];
        q[(row, i + 1)] = x * g[(0, 1)] + y * g[(1, 1)];
    }
}

/// Reordered Schur form: moves every eigenvalue satisfying `select` to the
/// leading diagonal block. Returns (q, t, k) with k the number selected; the
/// first k columns of q are an orthonormal basis of the associated invariant
/// subspace.
pub fn ordered_schur(a: &CMat, select: impl Fn(Complex64) -> bool) -> (CMat, CMat, usize) {
    let (mut q, mut t) = schur(a);
    let n = t.nrows();
    let mut k = 0;
    for pos in 0..n {
        if select(t[(pos, pos)]) {
            let mut j = pos;
            while j > k {
                schur_swap(&mut q, &mut t, j - 1);
                j -= 1;
            }
            k += 1;
        }
    }
    (q, t, k)
}

/// Eigenvalues of a general complex matrix.
pub fn eigenvalues(a: &CMat) -> CVec {
    let (_, t) = schur(a);
    CVec::from_fn(a.nrows(), |i, _| t[(i, i)])
}

/// Full eigendecomposition via Schur form plus triangular back-substitution.
/// Returns (values, vectors) with unit-norm columns. Defective matrices yield
/// nearly parallel columns rather than an error.
pub fn eigen(a: &CMat) -> (CVec, CMat) {
    let (q, t) = schur(a);
    let n = a.nrows();
    let scale = t.norm().max(1e-300);
    let mut vecs = CMat::zeros(n, n);
    for j in 0..n {
        let lam = t[(j, j)];
        let mut w = CVec::zeros(n);
        w[j] = ONE;
        // Back-substitute (t[0..j,0..j] - lam) y = -t[0..j, j].
        for i in (0..j).rev() {
            let mut rhs = -t[(i, j)];
            for l in (i + 1)..j {
                rhs -= t[(i, l)] * w[l];
            }
            let mut piv = t[(i, i)] - lam;
            if piv.norm() < 1e-14 * scale {
                piv = Complex64::new(1e-14 * scale, 0.0);
            }
            w[i] = rhs / piv;
        }
        let v = &q * w;
        let nrm = v.norm();
        vecs.set_column(j, &(v / Complex64::new(nrm, 0.0)));
    }
    (CVec::from_fn(n, |i, _| t[(i, i)]), vecs)
}

/// Eigenvalues and orthonormal eigenbasis of a Hermitian matrix.
pub fn hermitian_eigen(a: &CMat) -> (RVec, CMat) {
    let se = nalgebra::SymmetricEigen::new(a.clone());
    (se.eigenvalues, se.eigenvectors)
}

/// Eigenvalues and orthonormal eigenbasis of a real symmetric matrix.
pub fn symmetric_eigen(a: &RMat) -> (RVec, RMat) {
    let se = nalgebra::SymmetricEigen::new(a.clone());
    (se.eigenvalues, se.eigenvectors)
}

/// Symmetric positive-definite square root and inverse square root.
/// Panics if the matrix has an eigenvalue <= 0.
pub fn spd_sqrt_pair(a: &RMat) -> (RMat, RMat) {
    let (vals, vecs) = symmetric_eigen(a);
    let min = vals.min();
    assert!(min > 0.0, "matrix is not positive definite (min eig {min})");
    let half = RMat::from_diagonal(&vals.map(|v| v.sqrt()));
    let inv_half = RMat::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    (&vecs * half * vecs.transpose(), &vecs * inv_half * vecs.transpose())
}

/// Largest real part over the spectrum.
pub fn max_re_eigenvalue(a: &CMat) -> f64 {
    eigenvalues(a).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Matrix exponential by Pade approximation with scaling and squaring.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm = a.camax().max(1e-300) * n as f64;
    let s = norm.log2().ceil().max(0.0) as u32 + 1;
    let b = a / Complex64::new(2f64.powi(s as i32), 0.0);
    // Pade [8/8]: coefficients c_k = (2p-k)! p! / ((2p)! k! (p-k)!).
    let p = 8usize;
    let mut coeff = vec![1.0f64; p + 1];
    for k in 1..=p {
        coeff[k] = coeff[k - 1] * ((p - k + 1) as f64) / (((2 * p - k + 1) as f64) * k as f64);
    }
    let mut num = CMat::identity(n, n) * Complex64::new(coeff[p], 0.0);
    let mut den = num.clone() * Complex64::new(if p % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
    for k in (0..p).rev() {
        num = &num * &b + CMat::identity(n, n) * Complex64::new(coeff[k], 0.0);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        den = &den * &b + CMat::identity(n, n) * Complex64::new(sign * coeff[k], 0.0);
    }
    let mut e = den.lu().solve(&num).expect("expm: Pade denominator singular");
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

/// Thin QR orthonormalization of the columns.
pub fn orthonormalize(frame: &CMat) -> CMat {
    let qr = frame.clone().qr();
    qr.q()
}

/// Aligns the new orthonormal frame against the previous one by the unitary
/// least-rotation (orthogonal Procrustes) factor, so frames vary continuously
/// along paths.
pub fn least_rotation_align(prev: &CMat, new: &CMat) -> CMat {
    let m = new.adjoint() * prev;
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd factors requested");
    let vt = svd.v_t.expect("svd factors requested");
    new * (u * vt)
}

/// Phase factor aligning a new vector against a reference direction:
/// returns new * e^{i phi} closest to prev in direction.
pub fn align_phase(prev: &CVec, new: &CVec) -> CVec {
    let s: Complex64 = new.dotc(prev);
    if s.norm() == 0.0 {
        return new.clone();
    }
    new * (s / Complex64::new(s.norm(), 0.0))
}

/// Ordinary least squares line fit y = slope * x + intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

/// Fitted order q of err ~ C h^q from samples on a log-log line.
pub fn fit_order(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.max(1e-300).ln()).collect();
    linear_fit(&xs, &ys).0
}

/// Spectral (oblique) projector onto the invariant subspace of `a` selected
/// by the eigenvalue predicate, along the complementary invariant subspace.
/// Unlike the orthogonal projector it is analytic in the matrix entries
/// wherever the selected spectrum stays separated, so transporting frames
/// through it is a flat connection: closed loops return the initial frame.
pub fn spectral_projector(a: &CMat, select: impl Fn(Complex64) -> bool) -> (CMat, usize) {
    let n = a.nrows();
    let (q, t, k) = ordered_schur(a, select);
    if k == 0 {
        return (CMat::zeros(n, n), 0);
    }
    if k == n {
        return (CMat::identity(n, n), n);
    }
    let m = n - k;
    // Sylvester block equation T11 X - X T22 = T12, solved column by column
    // with upper triangular back-substitution.
    let mut x = CMat::zeros(k, m);
    for j in 0..m {
        let mut rhs = t.view((0, k), (k, m)).column(j).into_owned();
        for i in 0..j {
            rhs += x.column(i) * t[(k + i, k + j)];
        }
        let shift = t[(k + j, k + j)];
        let mut xj = CVec::zeros(k);
        for row in (0..k).rev() {
            let mut s = rhs[row];
            for col in row + 1..k {
                s -= t[(row, col)] * xj[col];
            }
            xj[row] = s / (t[(row, row)] - shift);
        }
        x.set_column(j, &xj);
    }
    let mut pt = CMat::zeros(n, n);
    for i in 0..k {
        pt[(i, i)] = ONE;
        for j in 0..m {
            pt[(i, k + j)] = x[(i, j)];
        }
    }
    (&q * pt * q.adjoint(), k)
}

/// Spectral distance between the column spans of two orthonormal frames,
/// equal to the sine of the largest principal angle.
pub fn subspace_distance(a: &CMat, b: &CMat) -> f64 {
    let pa = a * a.adjoint();
    let pb = b * b.adjoint();
    (pa - pb).svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

/// Winding number of f along the closed polygonal contour, in turns.
/// Segments are bisected until adjacent samples turn by less than pi/2;
/// returns None when f fails, hits zero, or refinement bottoms out.
pub fn winding_number(
    f: &mut impl FnMut(Complex64) -> Option<Complex64>,
    contour: &[Complex64],
    max_depth: usize,
) -> Option<f64> {
    assert!(contour.len() >= 3, "contour too short");
    let eval = |f: &mut dyn FnMut(Complex64) -> Option<Complex64>, z: Complex64| {
        let w = f(z)?;
        if w.norm() == 0.0 || !w.is_finite() {
            None
        } else {
            Some(w)
        }
    };
    let mut total = 0.0;
    let n = contour.len();
    let mut prev_z = contour[0];
    let w0 = eval(f, prev_z)?;
    let mut prev_w = w0;
    for i in 1..=n {
        let z_next = contour[i % n];
        let w_next = if i == n { w0 } else { eval(f, z_next)? };
        // Recursive bisection on this segment.
        let mut stack = vec![(prev_z, prev_w, z_next, w_next, 0usize)];
        while let Some((za, wa, zb, wb, depth)) = stack.pop() {
            let darg = (wb / wa).arg();
            if darg.abs() < std::f64::consts::FRAC_PI_2 {
                total += darg;
            } else {
                if depth >= max_depth {
                    return None;
                }
                let zm = (za + zb) * 0.5;
                let wm = eval(f, zm)?;
                stack.push((zm, wm, zb, wb, depth + 1));
                stack.push((za, wa, zm, wm, depth + 1));
            }
        }
        prev_z = z_next;
        prev_w = w_next;
    }
    Some(total / std::f64::consts::TAU)
}

/// Real orthonormal basis of the invariant subspace of a real matrix for the
/// eigenvalues satisfying `select`. Complex pairs are selected together by a
/// predicate on the eigenvalue, and the complex Schur basis is realified by
/// rank-revealing QR on its stacked real and imaginary parts.
pub fn real_invariant_basis(m: &RMat, select: impl Fn(Complex64) -> bool) -> RMat {
    let n = m.nrows();
    let (q, _, k) = ordered_schur(&complexify(m), select);
    if k == 0 {
        return RMat::zeros(n, 0);
    }
    let mut stacked = RMat::zeros(n, 2 * k);
    for j in 0..k {
        for i in 0..n {
            stacked[(i, j)] = q[(i, j)].re;
            stacked[(i, k + j)] = q[(i, j)].im;
        }
    }
    let qr = stacked.col_piv_qr();
    let (qm, rm, _) = qr.unpack();
    let tol = 1e-10 * rm[(0, 0)].abs().max(1e-300);
    let mut rank = 0;
    for i in 0..rm.nrows().min(rm.ncols()) {
        if rm[(i, i)].abs() > tol {
            rank += 1;
        }
    }
    assert_eq!(rank, k, "invariant subspace of a real matrix must be real");
    qm.columns(0, k).into_owned()
}

/// Banded real matrix with partial-pivoting LU, LAPACK-style band storage.
/// Assembly accepts entries with i - j in [-ku, kl]; factorization fill
/// widens the upper band by kl.
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major: entry (i, j) lives at cols[j][i - j + ku + kl].
    cols: Vec<Vec<f64>>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix {
            n,
            kl,
            ku,
            cols: vec![vec![0.0; 2 * kl + ku + 1]; n],
            pivots: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (i + self.ku + self.kl) - j
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(!self.factored);
        assert!(i < self.n && j < self.n);
        assert!(
            (j <= i && i - j <= self.kl) || (j > i && j - i <= self.ku),
            "entry ({i},{j}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        let at = self.idx(i, j);
        self.cols[j][at] += v;
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.cols[j][self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.cols[j][at] = v;
    }

    /// Factors in place; returns false on a (near-)singular pivot.
    pub fn factor(&mut self) -> bool {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ubw = ku + kl;
        for j in 0..n {
            let imax = (j + kl).min(n - 1);
            let mut piv = j;
            let mut best = self.get(j, j).abs();
            for i in (j + 1)..=imax {
                let v = self.get(i, j).abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            self.pivots[j] = piv;
            if best < 1e-300 {
                return false;
            }
            if piv != j {
                let kmax = (j + ubw).min(n - 1);
                for k in j..=kmax {
                    let a = self.get(j, k);
                    let b = self.get(piv, k);
                    self.set(j, k, b);
                    self.set(piv, k, a);
                }
            }
            let djj = self.get(j, j);
            for i in (j + 1)..=imax {
                let l = self.get(i, j) / djj;
                self.set(i, j, l);
                if l != 0.0 {
                    let kmax = (j + ubw).min(n - 1);
                    for k in (j + 1)..=kmax {
                        let v = self.get(j, k);
                        if v != 0.0 {
                            let at = self.idx(i, k);
                            self.cols[k][at] -= l * v;
                        }
                    }
                }
            }
        }
        self.factored = true;
        true
    }

    pub fn solve(&self, rhs: &RVec) -> RVec {
        assert!(self.factored, "factor() first");
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = rhs.clone();
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                x.swap_rows(j, p);
            }
            let xj = x[j];
            if xj != 0.0 {
                let imax = (j + kl).min(n - 1);
                for i in (j + 1)..=imax {
                    x[i] -= self.get(i, j) * xj;
                }
            }
        }
        let ubw = ku + kl;
        for j in (0..n).rev() {
            let mut v = x[j];
            let kmax = (j + ubw).min(n - 1);
            for k in (j + 1)..=kmax {
                v -= self.get(j, k) * x[k];
            }
            x[j] = v / self.get(j, j);
        }
        x
    }
}

/// Condition number estimate via singular values.
pub fn cond2(a: &CMat) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
