//! Hyperbolic stability of the ideal shock: the Lopatinski determinant, its
//! one-dimensional reduction, glancing sets, and sphere scans classifying
//! weak versus strong dynamical stability.
//!
//! Normal modes of the linearized ideal problem solve U' = G U on each side,
//! with generator G = -(A^1 - sI)^{-1} (lambda + i A^xi) frozen at the
//! endpoint. The determinant stacks the modes decaying at -inf (unstable
//! subspace of G_-), those decaying at +inf (stable subspace of G_+), and the
//! front-displacement column lambda [U] + i [F^xi].

use crate::linalg::{
    complexify, eigenvalues, ordered_schur, spectral_projector, subspace_distance, CMat, CVec,
    RMat, RVec, I,
};
use crate::profile_solver::{ShockClassification, ShockTriple};
use crate::system_model::{sphere_directions, SystemDefinition};
use num_complex::Complex64;
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum InviscidError {
    #[error("frequency (0, 0) is excluded from the stability conditions")]
    ExcludedPoint,
    #[error("center subspace detected at Re lambda = {0} (hyperbolicity violation)")]
    CenterSubspace(f64),
    #[error("normal coefficient matrix is singular at this endpoint")]
    SingularNormal,
    #[error("subspace graph form is rank deficient")]
    GraphForm,
    #[error("classification failed: {0}")]
    Classification(String),
    #[error("basis continuation lost continuity near a glancing point")]
    BasisDiscontinuity,
}

/// Transverse frequency and spectral parameter, with polar access
/// (xi, lambda) = rho (xi0, lambda0).
#[derive(Debug, Clone)]
pub struct Frequency {
    pub xi_tilde: RVec,
    pub lambda: Complex64,
}

impl Frequency {
    pub fn new(xi_tilde: RVec, lambda: Complex64) -> Self {
        Frequency { xi_tilde, lambda }
    }

    pub fn from_polar(rho: f64, xi0: &RVec, lambda0: Complex64) -> Self {
        Frequency { xi_tilde: xi0 * rho, lambda: lambda0 * rho }
    }

    pub fn rho(&self) -> f64 {
        (self.xi_tilde.norm_squared() + self.lambda.norm_sqr()).sqrt()
    }

    pub fn polar(&self) -> (f64, RVec, Complex64) {
        let rho = self.rho();
        if rho == 0.0 {
            return (0.0, self.xi_tilde.clone(), self.lambda);
        }
        (rho, &self.xi_tilde / rho, self.lambda / rho)
    }

    pub fn tau(&self) -> f64 {
        self.lambda.im
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Minus,
    Plus,
}

/// Interior ODE generator G = -(A^1 - sI)^{-1}(lambda + i A^xi) at a state.
pub fn hyperbolic_generator(
    system: &SystemDefinition,
    u: &RVec,
    s: f64,
    freq: &Frequency,
) -> Result<CMat, InviscidError> {
    let n = system.n;
    let a1 = system.flux_jacobian(u, 0) - RMat::identity(n, n) * s;
    let mut sym = CMat::identity(n, n) * freq.lambda;
    for j in 1..system.d {
        let aj = complexify(&system.flux_jacobian(u, j));
        sym += aj * (I * Complex64::new(freq.xi_tilde[j - 1], 0.0));
    }
    let rhs = complexify(&a1)
        .lu()
        .solve(&sym)
        .ok_or(InviscidError::SingularNormal)?;
    Ok(-rhs)
}

/// Canonical graph-form basis of the span of an orthonormal frame: pivot
/// rows (chosen by column-pivoted QR on the transpose) carry the identity.
/// The representative depends only on the subspace, so determinants built
/// from it are reproducible, exactly homogeneous of degree zero, and map to
/// their conjugates under conjugation of the subspace.
fn canonical_graph_basis(frame: &CMat) -> Result<CMat, InviscidError> {
    let n = frame.nrows();
    let k = frame.ncols();
    if k == 0 {
        return Ok(CMat::zeros(n, 0));
    }
    let qr = frame.transpose().col_piv_qr();
    let mut tags = nalgebra::RowDVector::from_fn(n, |_, j| j as f64);
    qr.p().permute_columns(&mut tags);
    let mut pivots: Vec<usize> = tags.iter().take(k).map(|&x| x as usize).collect();
    pivots.sort_unstable();
    let mut block = CMat::zeros(k, k);
    for (a, &row) in pivots.iter().enumerate() {
        for c in 0..k {
            block[(a, c)] = frame[(row, c)];
        }
    }
    let inv = block.try_inverse().ok_or(InviscidError::GraphForm)?;
    Ok(frame * inv)
}

/// Basis of the decaying modes at one endpoint: the unstable subspace of the
/// generator at -inf, the stable subspace at +inf, in canonical graph form.
pub fn hyperbolic_symbol_subspaces(
    system: &SystemDefinition,
    u: &RVec,
    s: f64,
    freq: &Frequency,
    side: Side,
) -> Result<CMat, InviscidError> {
    if freq.rho() < 1e-12 {
        return Err(InviscidError::ExcludedPoint);
    }
    let gen = hyperbolic_generator(system, u, s, freq)?;
    let eigs = eigenvalues(&gen);
    let scale = gen.norm().max(1.0);
    // Strictly inside Re lambda > 0 a center subspace contradicts
    // hyperbolicity; near the boundary it only limits the split.
    let tol = if freq.lambda.re >= 1e-6 { 1e-10 * scale } else { 1e-13 * scale };
    for z in eigs.iter() {
        if z.re.abs() <= tol {
            return Err(InviscidError::CenterSubspace(freq.lambda.re));
        }
    }
    let select: Box<dyn Fn(Complex64) -> bool> = match side {
        Side::Minus => Box::new(|z: Complex64| z.re > 0.0),
        Side::Plus => Box::new(|z: Complex64| z.re < 0.0),
    };
    let (q, _, k) = ordered_schur(&gen, select);
    let frame = q.columns(0, k).into_owned();
    canonical_graph_basis(&frame)
}

#[derive(Debug, Clone)]
pub struct LopatinskiEvaluation {
    pub value: Complex64,
    pub basis_minus: CMat,
    pub basis_plus: CMat,
    pub jump_term: CVec,
    /// Number of decaying modes carried from each side.
    pub dims: (usize, usize),
    /// Basis convention the value is reported under.
    pub normalization: &'static str,
}

/// Residual of invariance of a graph basis under the generator, relative to
/// the generator norm: || G r - r (G r)_pivot ||.
pub fn invariance_defect(gen: &CMat, basis: &CMat) -> f64 {
    let k = basis.ncols();
    if k == 0 {
        return 0.0;
    }
    let gb = gen * basis;
    // Recover the k x k action from the rows where basis carries identity:
    // least squares against the basis columns.
    let act = basis
        .clone()
        .svd(true, true)
        .solve(&gb, 1e-13)
        .expect("svd solve");
    (gb - basis * act).norm() / gen.norm().max(1.0)
}

pub fn lopatinski_det(
    system: &SystemDefinition,
    triple: &ShockTriple,
    freq: &Frequency,
) -> Result<LopatinskiEvaluation, InviscidError> {
    if freq.rho() < 1e-12 {
        return Err(InviscidError::ExcludedPoint);
    }
    let n = system.n;
    let um = triple.minus();
    let up = triple.plus();
    let basis_minus = hyperbolic_symbol_subspaces(system, &um, triple.s, freq, Side::Minus)?;
    let basis_plus = hyperbolic_symbol_subspaces(system, &up, triple.s, freq, Side::Plus)?;
    let jump_u = complexify_vec(&(&up - &um));
    let mut jump = &jump_u * freq.lambda;
    for j in 1..system.d {
        let jf = system.flux(&up, j) - system.flux(&um, j);
        jump += complexify_vec(&jf) * (I * Complex64::new(freq.xi_tilde[j - 1], 0.0));
    }
    let k_minus = basis_minus.ncols();
    let k_plus = basis_plus.ncols();
    if k_minus + k_plus + 1 != n {
        return Err(InviscidError::Classification(format!(
            "mode count {} + {} + 1 != n = {}",
            k_minus, k_plus, n
        )));
    }
    // Decaying interior modes enter the linearized jump condition through
    // their flux traces (A^1 - s) r, not through r itself; in one dimension
    // the modes are eigenvectors of A^1 so the weight is only a column
    // scaling, but in several dimensions it changes the span.
    let wm = complexify(&(system.flux_jacobian(&um, 0) - RMat::identity(n, n) * triple.s));
    let wp = complexify(&(system.flux_jacobian(&up, 0) - RMat::identity(n, n) * triple.s));
    let mut m = CMat::zeros(n, n);
    let weighted_minus = &wm * &basis_minus;
    let weighted_plus = &wp * &basis_plus;
    for c in 0..k_minus {
        m.set_column(c, &weighted_minus.column(c));
    }
    for c in 0..k_plus {
        m.set_column(k_minus + c, &weighted_plus.column(c));
    }
    m.set_column(n - 1, &jump);
    Ok(LopatinskiEvaluation {
        value: m.determinant(),
        basis_minus,
        basis_plus,
        jump_term: jump,
        dims: (k_minus, k_plus),
        normalization: "flux-weighted graph bases (identity pivot block), jump column last",
    })
}

fn complexify_vec(v: &RVec) -> CVec {
    v.map(|x| Complex64::new(x, 0.0))
}

/// One-dimensional Liu-Majda determinant: outgoing characteristic modes of
/// the endpoint Jacobians bordered by the jump [U].
pub fn liu_majda_delta(
    system: &SystemDefinition,
    triple: &ShockTriple,
) -> Result<f64, InviscidError> {
    let n = system.n;
    let um = triple.minus();
    let up = triple.plus();
    let am = system.flux_jacobian(&um, 0);
    let ap = system.flux_jacobian(&up, 0);
    let s = triple.s;
    let out_minus = real_graph_basis(&am, |a| a < s)?;
    let out_plus = real_graph_basis(&ap, |a| a > s)?;
    let k_minus = out_minus.ncols();
    let k_plus = out_plus.ncols();
    if k_minus + k_plus + 1 != n {
        return Err(InviscidError::Classification(format!(
            "outgoing mode count {} + {} + 1 != n = {}",
            k_minus, k_plus, n
        )));
    }
    let mut m = RMat::zeros(n, n);
    for c in 0..k_minus {
        m.set_column(c, &out_minus.column(c));
    }
    for c in 0..k_plus {
        m.set_column(k_minus + c, &out_plus.column(c));
    }
    m.set_column(n - 1, &(&up - &um));
    Ok(m.determinant())
}

/// Real canonical graph basis of the invariant subspace of a real matrix
/// with real spectrum, selected by eigenvalue.
fn real_graph_basis(
    a: &RMat,
    select: impl Fn(f64) -> bool,
) -> Result<RMat, InviscidError> {
    let frame = crate::linalg::real_invariant_basis(a, |z| select(z.re));
    let g = canonical_graph_basis(&complexify(&frame))?;
    Ok(g.map(|z| z.re))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GlancingPoint {
    pub xi_tilde: Vec<f64>,
    pub tau: f64,
    pub xi1: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GlancingCurve {
    pub family: usize,
    pub multiplicity: usize,
    pub points: Vec<GlancingPoint>,
    /// Set when the root multiplicity changed along the curve.
    pub split_warning: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GlancingSet {
    pub curves: Vec<GlancingCurve>,
}

/// Characteristic speed a_r of the co-moving symbol at longitudinal
/// frequency xi1, branch tracked by sorted order at the reference point.
fn characteristic_speed(
    system: &SystemDefinition,
    u: &RVec,
    s: f64,
    xi1: f64,
    xi_tilde: &RVec,
    family: usize,
) -> f64 {
    let n = system.n;
    let mut sym = (system.flux_jacobian(u, 0) - RMat::identity(n, n) * s) * xi1;
    for j in 1..system.d {
        sym += system.flux_jacobian(u, j) * xi_tilde[j - 1];
    }
    let mut re: Vec<f64> = eigenvalues(&complexify(&sym)).iter().map(|z| z.re).collect();
    re.sort_by(|a, b| a.partial_cmp(b).unwrap());
    re[family]
}

/// Roots of d a_r / d xi1 = 0 over a symmetric xi1 bracket, with the local
/// root multiplicity s of i tau + a_r read from a Taylor fit.
pub fn glancing_set(
    system: &SystemDefinition,
    u: &RVec,
    s: f64,
    family: usize,
    xi_tilde_grid: &[RVec],
    xi1_range: f64,
) -> Result<GlancingSet, InviscidError> {
    if system.d == 1 {
        return Ok(GlancingSet { curves: Vec::new() });
    }
    let a = |xi1: f64, xt: &RVec| characteristic_speed(system, u, s, xi1, xt, family);
    let mut points: Vec<GlancingPoint> = Vec::new();
    for xt in xi_tilde_grid {
        let scale = 1.0 + xt.norm();
        let h = 1e-5 * scale;
        let da = |xi1: f64| (a(xi1 + h, xt) - a(xi1 - h, xt)) / (2.0 * h);
        let n_scan = 161;
        let mut roots: Vec<f64> = Vec::new();
        let mut prev_x = -xi1_range;
        let mut prev_d = da(prev_x);
        if prev_d == 0.0 {
            roots.push(prev_x);
        }
        for i in 1..n_scan {
            let x = -xi1_range + 2.0 * xi1_range * i as f64 / (n_scan - 1) as f64;
            let dv = da(x);
            if dv == 0.0 {
                roots.push(x);
            } else if prev_d != 0.0 && prev_d.signum() != dv.signum() {
                // Bisection refinement of the bracketed derivative root.
                let (mut lo, mut hi) = (prev_x, x);
                let mut flo = prev_d;
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let fm = da(mid);
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if flo.signum() == fm.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev_x = x;
            prev_d = dv;
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-6 * scale);
        for root in roots {
            let mult = root_multiplicity(&a, root, xt, scale);
            points.push(GlancingPoint {
                xi_tilde: xt.iter().copied().collect(),
                tau: -a(root, xt),
                xi1: root,
                multiplicity: mult,
            });
        }
    }
    // Group into curves: walk the grid, connect points with nearby tau.
    let mut curves: Vec<GlancingCurve> = Vec::new();
    for pt in points {
        let attach = curves.iter_mut().find(|c| {
            let last = c.points.last().unwrap();
            let dxi = RVec::from_vec(pt.xi_tilde.clone()) - RVec::from_vec(last.xi_tilde.clone());
            let dxi = dxi.norm();
            dxi > 0.0 && (pt.tau - last.tau).abs() <= 4.0 * dxi + 1e-8
        });
        match attach {
            Some(c) => {
                if c.multiplicity != pt.multiplicity {
                    c.split_warning = true;
                }
                c.points.push(pt);
            }
            None => curves.push(GlancingCurve {
                family,
                multiplicity: pt.multiplicity,
                points: vec![pt],
                split_warning: false,
            }),
        }
    }
    Ok(GlancingSet { curves })
}

/// Smallest k >= 2 with the k-th xi1-derivative of a_r nonvanishing at the
/// point, from a degree-six Taylor fit on a centered stencil.
fn root_multiplicity(
    a: &impl Fn(f64, &RVec) -> f64,
    xi1: f64,
    xt: &RVec,
    scale: f64,
) -> usize {
    let h = 5e-2 * scale;
    let m = 3usize;
    let ns = 2 * m + 1;
    let mut v = RMat::zeros(ns, ns);
    let mut y = RVec::zeros(ns);
    for i in 0..ns {
        let dx = (i as f64 - m as f64) * h;
        let mut p = 1.0;
        for j in 0..ns {
            v[(i, j)] = p;
            p *= dx;
        }
        y[i] = a(xi1 + dx, xt);
    }
    let coeff = v.lu().solve(&y).expect("Vandermonde solve");
    let a0 = coeff[0].abs().max(1.0);
    for k in 2..=4 {
        // Relative size of the k-th Taylor term at the stencil scale.
        if (coeff[k] * h.powi(k as i32)).abs() > 1e-7 * a0 {
            return k;
        }
    }
    5
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ScanSample {
    pub xi0: Vec<f64>,
    pub tau0: f64,
    pub re_delta: f64,
    pub im_delta: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ScanWitness {
    pub xi0: Vec<f64>,
    pub tau0: f64,
    pub abs_delta: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LopatinskiScan {
    pub weak_stable: bool,
    pub strong_stable: bool,
    pub min_abs_boundary: f64,
    pub median_abs: f64,
    pub neutral_roots: Vec<ScanWitness>,
    pub unstable_rays: Vec<ScanWitness>,
    pub indeterminate_cells: usize,
    pub samples: Vec<ScanSample>,
}

pub struct ScanOptions {
    pub sphere_count: usize,
    pub boundary_offset: f64,
    pub winding_rays: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { sphere_count: 180, boundary_offset: 1e-8, winding_rays: 8 }
    }
}

/// Scans the unit frequency sphere Re lambda = offset for near-zeros of the
/// Lopatinski determinant and counts interior roots per transverse ray by
/// the argument principle.
pub fn lopatinski_scan(
    system: &SystemDefinition,
    triple: &ShockTriple,
    classification: &ShockClassification,
    opts: &ScanOptions,
) -> Result<LopatinskiScan, InviscidError> {
    let d = system.d;
    let _ = classification;
    // Boundary sphere samples (xi0, tau0), |xi0|^2 + tau0^2 = 1.
    let dirs = sphere_directions(d, opts.sphere_count);
    let samples: Vec<Result<ScanSample, InviscidError>> = dirs
        .par_iter()
        .map(|dir| {
            let xi0 = dir.rows(0, d - 1).into_owned();
            let tau0 = dir[d - 1];
            let freq =
                Frequency::new(xi0.clone(), Complex64::new(opts.boundary_offset, tau0));
            let ev = lopatinski_det(system, triple, &freq)?;
            Ok(ScanSample {
                xi0: xi0.iter().copied().collect(),
                tau0,
                re_delta: ev.value.re,
                im_delta: ev.value.im,
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(samples.len());
    let mut indeterminate = 0usize;
    for s in samples {
        match s {
            Ok(row) => rows.push(row),
            Err(InviscidError::CenterSubspace(_)) => indeterminate += 1,
            Err(e) => return Err(e),
        }
    }
    let mut mags: Vec<f64> =
        rows.iter().map(|r| (r.re_delta.powi(2) + r.im_delta.powi(2)).sqrt()).collect();
    let mut sorted = mags.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.is_empty() { 0.0 } else { sorted[sorted.len() / 2] };
    let min_abs = sorted.first().copied().unwrap_or(0.0);
    let zero_tol = 1e-6 * median.max(1e-300);
    let mut neutral = Vec::new();
    for (row, mag) in rows.iter().zip(mags.iter_mut()) {
        if *mag < zero_tol {
            neutral.push(ScanWitness {
                xi0: row.xi0.clone(),
                tau0: row.tau0,
                abs_delta: *mag,
            });
        }
    }

    // Interior roots per transverse ray: argument principle on the
    // half-disk {Re lambda >= offset, |lambda| <= 1} at |xi| = 1.
    let rays: Vec<RVec> = if d == 1 {
        vec![RVec::zeros(0)]
    } else {
        sphere_directions(d - 1, opts.winding_rays)
    };
    let mut unstable_rays = Vec::new();
    for xi0 in &rays {
        let contour = half_disk_contour(opts.boundary_offset, 1.0, 48);
        match lopatinski_winding(system, triple, xi0, &contour, 48) {
            Some(w) if w.abs() < 0.25 => {}
            Some(w) => unstable_rays.push(ScanWitness {
                xi0: xi0.iter().copied().collect(),
                tau0: w,
                abs_delta: w.abs(),
            }),
            None => indeterminate += 1,
        }
    }
    let weak_stable = unstable_rays.is_empty() && indeterminate == 0;
    let strong_stable = weak_stable && neutral.is_empty() && min_abs >= zero_tol;
    Ok(LopatinskiScan {
        weak_stable,
        strong_stable,
        min_abs_boundary: min_abs,
        median_abs: median,
        neutral_roots: neutral,
        unstable_rays,
        indeterminate_cells: indeterminate,
        samples: rows,
    })
}

/// Lopatinski determinant winding along a closed lambda contour at fixed
/// transverse frequency. Decaying-mode frames are transported through the
/// spectral projectors of the generators, the flat analytic connection, so
/// the continued determinant is single-valued around contractible loops and
/// its total argument counts interior zeros. Graph-form values are not
/// usable here: their pivot choice switches discretely along paths.
pub fn lopatinski_winding(
    system: &SystemDefinition,
    triple: &ShockTriple,
    xi0: &RVec,
    contour: &[Complex64],
    max_depth: usize,
) -> Option<f64> {
    let um = triple.minus();
    let up = triple.plus();
    let n = system.n;
    let wm = complexify(&(system.flux_jacobian(&um, 0) - RMat::identity(n, n) * triple.s));
    let wp = complexify(&(system.flux_jacobian(&up, 0) - RMat::identity(n, n) * triple.s));
    // The per-step transport error is quadratic in the frame drift and the
    // accumulated closure error is linear in the gate, so the gate sits a
    // factor below the closure tolerance. Near a glancing frequency on the
    // contour the decaying frame rotates on the scale of the contour offset
    // and the gate is what forces bisection down to that scale.
    let drift_gate = 2e-4;
    let frames_at = |lam: Complex64,
                     prev: Option<&(CMat, CMat)>|
     -> Option<((CMat, CMat), Complex64)> {
        let freq = Frequency::new(xi0.clone(), lam);
        let gen_m = hyperbolic_generator(system, &um, triple.s, &freq).ok()?;
        let gen_p = hyperbolic_generator(system, &up, triple.s, &freq).ok()?;
        let (proj_m, km) = spectral_projector(&gen_m, |z| z.re > 0.0);
        let (proj_p, kp) = spectral_projector(&gen_p, |z| z.re < 0.0);
        let (rm, rp) = match prev {
            None => {
                let gm = hyperbolic_symbol_subspaces(system, &um, triple.s, &freq, Side::Minus)
                    .ok()?;
                let gp = hyperbolic_symbol_subspaces(system, &up, triple.s, &freq, Side::Plus)
                    .ok()?;
                (crate::linalg::orthonormalize(&gm), crate::linalg::orthonormalize(&gp))
            }
            Some((pm, pp)) => {
                if pm.ncols() != km || pp.ncols() != kp {
                    return None;
                }
                let rm = &proj_m * pm;
                let rp = &proj_p * pp;
                let ok = |r: &CMat, p: &CMat| {
                    r.ncols() == 0 || (r - p).norm() < drift_gate * p.norm().max(1e-300)
                };
                if !ok(&rm, pm) || !ok(&rp, pp) {
                    return None;
                }
                (rm, rp)
            }
        };
        let jump_u = complexify_vec(&(&up - &um));
        let mut jump = &jump_u * lam;
        for j in 1..system.d {
            let jf = system.flux(&up, j) - system.flux(&um, j);
            jump += complexify_vec(&jf) * (I * Complex64::new(xi0[j - 1], 0.0));
        }
        let wrm = &wm * &rm;
        let wrp = &wp * &rp;
        let mut m = CMat::zeros(n, n);
        for c in 0..wrm.ncols() {
            m.set_column(c, &wrm.column(c));
        }
        for c in 0..wrp.ncols() {
            m.set_column(wrm.ncols() + c, &wrp.column(c));
        }
        m.set_column(n - 1, &jump);
        let det = m.determinant();
        if det.norm() == 0.0 || !det.is_finite() {
            return None;
        }
        Some(((rm, rp), det))
    };

    // Sequential adaptive march: refine a segment until the argument step is
    // resolved, transporting frames through every inserted point.
    fn walk(
        frames_at: &dyn Fn(Complex64, Option<&(CMat, CMat)>) -> Option<((CMat, CMat), Complex64)>,
        za: Complex64,
        fa: &(CMat, CMat),
        da: Complex64,
        zb: Complex64,
        depth: usize,
        max_depth: usize,
    ) -> Option<(f64, (CMat, CMat), Complex64)> {
        let coarse = frames_at(zb, Some(fa));
        if let Some((fb, db)) = coarse {
            let darg = (db / da).arg();
            if darg.abs() < 0.25 * std::f64::consts::PI {
                return Some((darg, fb, db));
            }
        }
        if depth >= max_depth {
            return None;
        }
        let zm = (za + zb) * 0.5;
        let (s1, fm, dm) = walk(frames_at, za, fa, da, zm, depth + 1, max_depth)?;
        let (s2, fb, db) = walk(frames_at, zm, &fm, dm, zb, depth + 1, max_depth)?;
        Some((s1 + s2, fb, db))
    }

    // Mesh-doubling outer loop: projector transport is second-order in the
    // step, so closure failure signals an under-resolved stretch.
    for level in 0..4 {
        let pts = refine_contour(contour, 1 << level);
        let Some((f0, d0)) = frames_at(pts[0], None) else { return None };
        let mut total = 0.0;
        let mut cur_f = f0;
        let mut cur_d = d0;
        let npts = pts.len();
        let mut failed = false;
        for i in 1..=npts {
            let zb = pts[i % npts];
            match walk(&frames_at, pts[(i - 1) % npts], &cur_f, cur_d, zb, 0, max_depth) {
                Some((s, fb, db)) => {
                    total += s;
                    cur_f = fb;
                    cur_d = db;
                }
                None => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            continue;
        }
        let closure = (cur_d - d0).norm() / d0.norm();
        let turns = total / std::f64::consts::TAU;
        // Closure error is first order in the drift gate, so the acceptance
        // threshold sits a comfortable factor above the gate, not at the
        // gate itself.
        if closure <= 25.0 * drift_gate && (turns - turns.round()).abs() < 0.1 {
            return Some(turns);
        }
    }
    None
}

/// Inserts `factor - 1` equally spaced points into each contour edge.
fn refine_contour(contour: &[Complex64], factor: usize) -> Vec<Complex64> {
    if factor <= 1 {
        return contour.to_vec();
    }
    let n = contour.len();
    let mut out = Vec::with_capacity(n * factor);
    for i in 0..n {
        let a = contour[i];
        let b = contour[(i + 1) % n];
        for k in 0..factor {
            out.push(a + (b - a) * (k as f64 / factor as f64));
        }
    }
    out
}

/// Closed boundary of {Re z >= sigma, |z| <= radius}, counterclockwise.
fn half_disk_contour(sigma: f64, radius: f64, arc_points: usize) -> Vec<Complex64> {
    let t = (radius * radius - sigma * sigma).max(0.0).sqrt();
    let mut pts = Vec::new();
    // Vertical segment from bottom to top along Re z = sigma.
    let seg = 16;
    for i in 0..=seg {
        let y = -t + 2.0 * t * i as f64 / seg as f64;
        pts.push(Complex64::new(sigma, y));
    }
    // Arc from angle atan2(t, sigma) down to -atan2(t, sigma), clockwise in
    // angle (counterclockwise traversal of the region boundary).
    let a0 = t.atan2(sigma);
    for i in 1..arc_points {
        let ang = a0 - 2.0 * a0 * i as f64 / arc_points as f64;
        pts.push(Complex64::from_polar(radius, ang));
    }
    pts
}

/// Follows the decaying-mode subspaces along a path, reporting the largest
/// projector jump between consecutive samples. Large jumps near glancing
/// points flag an untrustworthy continuation.
pub fn subspace_continuity_along(
    system: &SystemDefinition,
    u: &RVec,
    s: f64,
    side: Side,
    path: &[Frequency],
) -> Result<(Vec<usize>, f64), InviscidError> {
    let mut dims = Vec::with_capacity(path.len());
    let mut prev: Option<CMat> = None;
    let mut worst: f64 = 0.0;
    for freq in path {
        let basis = hyperbolic_symbol_subspaces(system, u, s, freq, side)?;
        let ortho = crate::linalg::orthonormalize(&basis);
        dims.push(basis.ncols());
        if let Some(p) = &prev {
            if p.ncols() == ortho.ncols() {
                worst = worst.max(subspace_distance(p, &ortho));
            }
        }
        prev = Some(ortho);
    }
    Ok((dims, worst))
}
