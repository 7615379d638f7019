//! Evans determinant machinery for viscous shock spectra.
//!
//! The per-mode eigenvalue problem for a planar front, written in the
//! co-moving frame with transverse frequency `xi_tilde` and spectral
//! parameter `lambda`, is
//!
//! ```text
//! (B^11 U')' - (A^1 U)' - i A^xi U + i B^xi1 U' + i (B^1xi U)' - B^xixi U = lambda U
//! ```
//!
//! where `A^j` are the linearized flux coefficients about the sloped
//! background (see `system_model::linearized_flux_coefficient`) and the
//! superscript `xi` denotes contraction with the transverse frequency.
//! Grouping the exact x-derivatives into the single flux quantity
//!
//! ```text
//! Phi := B^11 U' - A^1 U + i B^1xi U,
//! Phi' =  lambda U + i A^xi U + B^xixi U - i B^xi1 U',
//! ```
//!
//! and noting that every viscosity tensor has zero first block row, the
//! hyperbolic rows give `Phi_I = -(A^1 U)_I` while the parabolic rows
//! introduce the only genuinely new unknown `z := Phi_II`. The phase
//! variable used throughout this module is `X = (u^I, u^II, z)`, of
//! dimension `n + r`. Closing `X' = A(x) X` needs the x-derivative of the
//! hyperbolic rows of `A^1` only, and those rows carry no viscous
//! correction, so the single profile-coefficient derivative that appears
//! is a flux Hessian contracted with the profile slope. No viscosity
//! derivatives along the profile enter, which keeps the coefficient as
//! smooth as the profile itself. The translation mode is represented
//! exactly as `X = (Ubar', 0)`.
//!
//! Both evaluation methods integrate trace-subtracted flows, so the value
//! reported at the matching point is already normalized by the asymptotic
//! growth factors and is invariant under enlarging the integration
//! interval. Winding counts transport the boundary eigenframes along the
//! contour with spectral projectors (a flat connection), which continues
//! the determinant analytically even where the contour crosses essential
//! spectrum and the literal stable/unstable splitting fails.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{complexify, eigenvalues, ordered_schur, spectral_projector, CMat, CVec, RMat, RVec};
use crate::profile_solver::ShockProfile;
use crate::system_model::{linearized_flux_coefficient, SystemDefinition};

#[derive(Debug, Error)]
pub enum EvansError {
    #[error("singular {block} along the profile at x1 = {x1:.6}")]
    SingularLeadingBlock { x1: f64, block: String },
    #[error("frequency lies outside the resolvable set: mode mu = {mu} at {side} infinity has no sign-definite real part")]
    OutsideLambda { mu: Complex64, side: &'static str },
    #[error("consistent splitting fails: {stable_plus} stable modes at +inf and {unstable_minus} unstable at -inf do not fill phase dimension {phase_dim}")]
    SplittingMismatch { stable_plus: usize, unstable_minus: usize, phase_dim: usize },
    #[error("integration stalled at x1 = {x1:.4} (step {step:.3e}); coefficient too stiff for the adaptive budget")]
    Stiffness { x1: f64, step: f64 },
    #[error("integrated frame degenerated at x1 = {x1:.4} (condition {cond:.3e})")]
    FrameDegeneracy { x1: f64, cond: f64 },
    #[error("winding computation failed: {0}")]
    Winding(String),
    #[error("structural assumption violated: {0}")]
    Structure(String),
}

/// Phase-space coefficient of `X' = A(x) X` for the eigenvalue problem at
/// (`xi_tilde`, `lambda`), assembled at the state `u` with slope `up` in a
/// frame moving with speed `s`. Layout: `X = (u^I, u^II, z)` with
/// `z = (B^11 U' - (A^1 - sI) U + i B^1xi U)_II`. Fails with a description
/// of the offending block when the parabolic block `b2` or the reduced
/// hyperbolic block `A11 - A12 b2^{-1} b1` is numerically singular.
pub fn phase_matrix(
    system: &SystemDefinition,
    u: &RVec,
    up: &RVec,
    s: f64,
    xi_tilde: &[f64],
    lambda: Complex64,
) -> Result<CMat, String> {
    let n = system.n;
    let r = system.r;
    let p = n - r;
    let nn = n + r;
    let im = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);

    let mut a1 = linearized_flux_coefficient(system, u, up, 0);
    for i in 0..n {
        a1[(i, i)] -= s;
    }
    let b11 = system.viscosity(u, 0, 0);
    let b1 = b11.view((p, 0), (r, p)).into_owned();
    let b2 = b11.view((p, p), (r, r)).into_owned();
    let sv = b2.clone().svd(false, false).singular_values;
    let (bmax, bmin) = (sv.max(), sv.min());
    if bmin <= 1e-12 * bmax.max(1e-300) {
        return Err(format!("parabolic block b2 (rcond {:.3e})", bmin / bmax.max(1e-300)));
    }
    let sinv = b2.clone().try_inverse().ok_or_else(|| "parabolic block b2".to_string())?;

    // Transverse contractions; all vanish in one space dimension.
    let mut axi = RMat::zeros(n, n);
    let mut bxi1 = RMat::zeros(n, n);
    let mut b1xi = RMat::zeros(n, n);
    let mut bxixi = RMat::zeros(n, n);
    for (t, &xi) in xi_tilde.iter().enumerate() {
        let j = t + 1;
        axi += linearized_flux_coefficient(system, u, up, j) * xi;
        bxi1 += system.viscosity(u, j, 0) * xi;
        b1xi += system.viscosity(u, 0, j) * xi;
        for (t2, &xi2) in xi_tilde.iter().enumerate() {
            bxixi += system.viscosity(u, j, t2 + 1) * (xi * xi2);
        }
    }

    let a11 = a1.view((0, 0), (p, p)).into_owned();
    let a12 = a1.view((0, p), (p, r)).into_owned();
    let g = &a11 - &a12 * &sinv * &b1;
    let ginv = if p > 0 {
        let svg = g.clone().svd(false, false).singular_values;
        let (gmax, gmin) = (svg.max(), svg.min());
        if gmin <= 1e-12 * gmax.max(1e-300) {
            return Err(format!("reduced hyperbolic block (rcond {:.3e})", gmin / gmax.max(1e-300)));
        }
        g.clone().try_inverse().ok_or_else(|| "reduced hyperbolic block".to_string())?
    } else {
        RMat::zeros(0, 0)
    };

    // C maps X to z + ((A^1 - sI) U)_II - i (B^1xi U)_II, the combination
    // whose product with b2^{-1} recovers the parabolic slope.
    let mut c2 = CMat::zeros(r, nn);
    for i in 0..r {
        for col in 0..n {
            c2[(i, col)] = Complex64::new(a1[(p + i, col)], -b1xi[(p + i, col)]);
        }
        c2[(i, n + i)] = one;
    }

    // Hyperbolic rows: G u^I' = -lambda u^I - i (A^xi U)_I - H_I U - A12 S C X,
    // with H_I the x-derivative of the hyperbolic rows of A^1 (flux Hessian).
    let mut row1 = CMat::zeros(p, nn);
    if p > 0 {
        let hi = hess_upper_rows(system, u, up);
        let mut rhs = CMat::zeros(p, nn);
        for i in 0..p {
            rhs[(i, i)] -= lambda;
            for col in 0..n {
                rhs[(i, col)] -= Complex64::new(hi[(i, col)], axi[(i, col)]);
            }
        }
        rhs -= complexify(&(&a12 * &sinv)) * &c2;
        row1 = complexify(&ginv) * rhs;
    }

    // Parabolic slope recovery: u^II' = S C X - S b1 u^I'.
    let row2 = complexify(&sinv) * &c2 - complexify(&(&sinv * &b1)) * &row1;

    // Parabolic rows of the grouped equation:
    // z' = lambda u^II + i (A^xi U)_II + (B^xixi U)_II - i (B^xi1 U')_II.
    let mut row3 = CMat::zeros(r, nn);
    for i in 0..r {
        row3[(i, p + i)] += lambda;
        for col in 0..n {
            row3[(i, col)] += Complex64::new(bxixi[(p + i, col)], axi[(p + i, col)]);
        }
    }
    let bl = bxi1.view((p, 0), (r, p)).into_owned();
    let br = bxi1.view((p, p), (r, r)).into_owned();
    row3 -= (complexify(&bl) * &row1 + complexify(&br) * &row2) * im;

    let mut a = CMat::zeros(nn, nn);
    a.view_mut((0, 0), (p, nn)).copy_from(&row1);
    a.view_mut((p, 0), (r, nn)).copy_from(&row2);
    a.view_mut((n, 0), (r, nn)).copy_from(&row3);
    Ok(a)
}

/// Hyperbolic rows of d/dx applied to the flux Jacobian along the profile:
/// the directional flux Hessian d^2 F^1(u)[up, .], rows 0..n-r. The viscous
/// correction to A^1 has identically zero hyperbolic rows, so this is the
/// entire coefficient derivative the phase reduction needs.
fn hess_upper_rows(system: &SystemDefinition, u: &RVec, up: &RVec) -> RMat {
    let n = system.n;
    let p = n - system.r;
    let speed = up.norm();
    if p == 0 || speed == 0.0 {
        return RMat::zeros(p, n);
    }
    let h = 1e-4 * (1.0 + u.norm()) / speed;
    let at = |t: f64| {
        let mut ut = u.clone();
        ut.axpy(t, up, 1.0);
        system.flux_jacobian(&ut, 0)
    };
    let d1 = at(h) - at(-h);
    let d2 = at(2.0 * h) - at(-2.0 * h);
    let full = (d1 * 8.0 - d2) / (12.0 * h);
    full.view((0, 0), (p, n)).into_owned()
}

/// Frequency-independent data shared by every Evans evaluation for one
/// profile and one transverse frequency: structural checks, a conditioning
/// scan of the two blocks the reduction inverts, and endpoint eigenvalue
/// data used to classify limiting modes.
pub struct EvansFamily<'a> {
    pub system: &'a SystemDefinition,
    pub profile: &'a ShockProfile,
    pub xi_tilde: Vec<f64>,
    /// Background shock speed; coefficients act in its co-moving frame.
    pub speed: f64,
    pub min_rcond_parabolic: f64,
    pub min_rcond_hyperbolic: f64,
    /// Eigenvalues of the reduced hyperbolic block at each endpoint
    /// (co-moving characteristic speeds of the relaxed first-order part).
    star_plus: Vec<Complex64>,
    star_minus: Vec<Complex64>,
    /// Eigenvalues of the parabolic block b2 at each endpoint.
    visc_plus: Vec<Complex64>,
    visc_minus: Vec<Complex64>,
}

fn reduced_block_rconds(
    system: &SystemDefinition,
    u: &RVec,
    up: &RVec,
    s: f64,
) -> Result<(f64, f64, RMat, RMat), String> {
    let n = system.n;
    let r = system.r;
    let p = n - r;
    let mut a1 = linearized_flux_coefficient(system, u, up, 0);
    for i in 0..n {
        a1[(i, i)] -= s;
    }
    let b11 = system.viscosity(u, 0, 0);
    let b1 = b11.view((p, 0), (r, p)).into_owned();
    let b2 = b11.view((p, p), (r, r)).into_owned();
    let sv = b2.clone().svd(false, false).singular_values;
    let rc_b = sv.min() / sv.max().max(1e-300);
    if rc_b <= 1e-12 {
        return Err(format!("parabolic block b2 (rcond {rc_b:.3e})"));
    }
    let sinv = b2.clone().try_inverse().ok_or("parabolic block b2")?;
    let a11 = a1.view((0, 0), (p, p)).into_owned();
    let a12 = a1.view((0, p), (p, r)).into_owned();
    let g = &a11 - &a12 * &sinv * &b1;
    let rc_g = if p > 0 {
        let svg = g.clone().svd(false, false).singular_values;
        let rc = svg.min() / svg.max().max(1e-300);
        if rc <= 1e-12 {
            return Err(format!("reduced hyperbolic block (rcond {rc:.3e})"));
        }
        rc
    } else {
        1.0
    };
    Ok((rc_b, rc_g, b2, g))
}

/// Validate block structure and block conditioning along the profile and
/// freeze the endpoint data every subsequent evaluation reuses.
pub fn build_evans_family<'a>(
    system: &'a SystemDefinition,
    profile: &'a ShockProfile,
    xi_tilde: &[f64],
) -> Result<EvansFamily<'a>, EvansError> {
    if xi_tilde.len() + 1 != system.d {
        return Err(EvansError::Structure(format!(
            "transverse frequency has {} components but the system is {}-dimensional",
            xi_tilde.len(),
            system.d
        )));
    }
    let s = profile.triple.s;
    let l = profile.half_length();
    for &x in &[-l, -l / 2.0, 0.0, l / 2.0, l] {
        let (u, _) = profile.eval(x);
        system
            .block_structure_ok(&u)
            .map_err(|e| EvansError::Structure(e.to_string()))?;
    }
    let mut min_b: f64 = f64::INFINITY;
    let mut min_g: f64 = f64::INFINITY;
    let stride = (profile.grid.len() / 256).max(1);
    let mut scan_at = |x: f64| -> Result<(), EvansError> {
        let (u, up) = profile.eval(x);
        match reduced_block_rconds(system, &u, &up, s) {
            Ok((rb, rg, _, _)) => {
                min_b = min_b.min(rb);
                min_g = min_g.min(rg);
                Ok(())
            }
            Err(block) => Err(EvansError::SingularLeadingBlock { x1: x, block }),
        }
    };
    let grid = &profile.grid;
    let mut idx = 0;
    while idx < grid.len() {
        scan_at(grid[idx])?;
        if idx + stride < grid.len() {
            scan_at(0.5 * (grid[idx] + grid[idx + stride]))?;
        }
        idx += stride;
    }
    scan_at(*grid.last().unwrap())?;

    let zero = RVec::zeros(system.n);
    let endpoint = |u: &RVec, side: &str| -> Result<(Vec<Complex64>, Vec<Complex64>), EvansError> {
        let (_, _, b2, g) = reduced_block_rconds(system, u, &zero, s).map_err(|block| {
            EvansError::SingularLeadingBlock { x1: if side == "plus" { l } else { -l }, block }
        })?;
        let ge: Vec<Complex64> = eigenvalues(&complexify(&g)).iter().copied().collect();
        let be: Vec<Complex64> = eigenvalues(&complexify(&b2)).iter().copied().collect();
        Ok((ge, be))
    };
    let (star_plus, visc_plus) = endpoint(&profile.triple.plus(), "plus")?;
    let (star_minus, visc_minus) = endpoint(&profile.triple.minus(), "minus")?;

    Ok(EvansFamily {
        system,
        profile,
        xi_tilde: xi_tilde.to_vec(),
        speed: s,
        min_rcond_parabolic: min_b,
        min_rcond_hyperbolic: min_g,
        star_plus,
        star_minus,
        visc_plus,
        visc_minus,
    })
}

impl<'a> EvansFamily<'a> {
    /// Freeze the spectral parameter; endpoint coefficients are assembled
    /// once here and reused by the integrators.
    pub fn at(&self, lambda: Complex64) -> EvansSystem<'_> {
        let zero = RVec::zeros(self.system.n);
        let a_plus = phase_matrix(self.system, &self.profile.triple.plus(), &zero, self.speed, &self.xi_tilde, lambda)
            .expect("endpoint blocks verified at family construction");
        let a_minus = phase_matrix(self.system, &self.profile.triple.minus(), &zero, self.speed, &self.xi_tilde, lambda)
            .expect("endpoint blocks verified at family construction");
        EvansSystem { family: self, lambda, a_plus, a_minus }
    }
}

/// The eigenvalue ODE `X' = A(x) X` at one frequency.
pub struct EvansSystem<'a> {
    pub family: &'a EvansFamily<'a>,
    pub lambda: Complex64,
    pub a_plus: CMat,
    pub a_minus: CMat,
}

impl EvansSystem<'_> {
    pub fn n_phase(&self) -> usize {
        self.family.system.n + self.family.system.r
    }

    /// Interior coefficient. The blocks inverted here were conditioning-
    /// scanned at family construction, so failure between scanned nodes is
    /// treated as unreachable.
    pub fn coefficient(&self, x: f64) -> CMat {
        let (u, up) = self.family.profile.eval(x);
        phase_matrix(self.family.system, &u, &up, self.family.speed, &self.family.xi_tilde, self.lambda)
            .unwrap_or_else(|block| panic!("singular {block} between scanned nodes at x1 = {x}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeClass {
    /// Slow root tracking a relaxed characteristic: mu ~ -lambda / a.
    Hyperbolic,
    /// Fast viscous root: mu ~ +/- sqrt(lambda / b).
    Parabolic,
    Unresolved,
}

#[derive(Debug, Clone)]
pub struct ModeClassification {
    pub mu: Complex64,
    pub class: ModeClass,
    pub predicted: Complex64,
    pub rel_err: f64,
}

/// Certificate that the limiting coefficients split consistently at the
/// given frequency: counts, strict spectral gaps, and an asymptotic
/// classification of every limiting mode.
#[derive(Debug, Clone)]
pub struct SplittingCertificate {
    pub lambda: Complex64,
    pub xi_tilde: Vec<f64>,
    pub mu_plus: Vec<Complex64>,
    pub mu_minus: Vec<Complex64>,
    pub stable_plus: usize,
    pub unstable_minus: usize,
    pub center_plus: usize,
    pub center_minus: usize,
    pub gap_plus: f64,
    pub gap_minus: f64,
    pub classes_plus: Vec<ModeClassification>,
    pub classes_minus: Vec<ModeClassification>,
}

fn center_tol(a: &CMat) -> f64 {
    1e-10 * a.norm().max(1.0)
}

fn sorted_eigs(a: &CMat) -> Vec<Complex64> {
    let mut mu: Vec<Complex64> = eigenvalues(a).iter().copied().collect();
    mu.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap().then(x.im.partial_cmp(&y.im).unwrap()));
    mu
}

fn classify_modes(
    mu: &[Complex64],
    star: &[Complex64],
    visc: &[Complex64],
    lambda: Complex64,
) -> Vec<ModeClassification> {
    let mut preds: Vec<(Complex64, ModeClass)> = Vec::new();
    for a in star {
        if a.norm() > 1e-12 {
            preds.push((-lambda / a, ModeClass::Hyperbolic));
        }
    }
    for b in visc {
        if b.norm() > 1e-300 {
            let root = (lambda / b).sqrt();
            preds.push((root, ModeClass::Parabolic));
            preds.push((-root, ModeClass::Parabolic));
        }
    }
    // Fast roots claim their asymptotes first so a slow root cannot steal
    // a parabolic prediction that happens to pass nearby.
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&i, &j| mu[j].norm().partial_cmp(&mu[i].norm()).unwrap());
    let mut used = vec![false; preds.len()];
    let mut out: Vec<Option<ModeClassification>> = vec![None; mu.len()];
    for &i in &order {
        let mut best: Option<(f64, usize)> = None;
        for (k, (pval, _)) in preds.iter().enumerate() {
            if used[k] {
                continue;
            }
            let rel = (mu[i] - pval).norm() / pval.norm().max(mu[i].norm()).max(1e-300);
            if best.map_or(true, |(br, _)| rel < br) {
                best = Some((rel, k));
            }
        }
        out[i] = Some(match best {
            Some((rel, k)) => {
                used[k] = true;
                let class = if rel <= 0.3 { preds[k].1 } else { ModeClass::Unresolved };
                ModeClassification { mu: mu[i], class, predicted: preds[k].0, rel_err: rel }
            }
            None => ModeClassification {
                mu: mu[i],
                class: ModeClass::Unresolved,
                predicted: mu[i],
                rel_err: f64::INFINITY,
            },
        });
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// Decide whether the limiting matrices split consistently at this
/// frequency. Strictly neutral limiting modes are rejected except at the
/// exact origin, where the strict stable/unstable dimensions may still
/// fill the phase space (scalar-type fronts); there the evaluation
/// proceeds on the strict frames alone.
pub fn limiting_splitting(es: &EvansSystem) -> Result<SplittingCertificate, EvansError> {
    let nn = es.n_phase();
    let mu_p = sorted_eigs(&es.a_plus);
    let mu_m = sorted_eigs(&es.a_minus);
    let tol_p = center_tol(&es.a_plus);
    let tol_m = center_tol(&es.a_minus);
    let stable_plus = mu_p.iter().filter(|z| z.re < -tol_p).count();
    let center_plus = mu_p.iter().filter(|z| z.re.abs() <= tol_p).count();
    let unstable_minus = mu_m.iter().filter(|z| z.re > tol_m).count();
    let center_minus = mu_m.iter().filter(|z| z.re.abs() <= tol_m).count();
    let at_origin = es.lambda.norm() <= 1e-12 && es.family.xi_tilde.iter().all(|v| *v == 0.0);
    if !at_origin {
        if let Some(z) = mu_p.iter().find(|z| z.re.abs() <= tol_p) {
            return Err(EvansError::OutsideLambda { mu: *z, side: "plus" });
        }
        if let Some(z) = mu_m.iter().find(|z| z.re.abs() <= tol_m) {
            return Err(EvansError::OutsideLambda { mu: *z, side: "minus" });
        }
    }
    if stable_plus + unstable_minus != nn {
        return Err(EvansError::SplittingMismatch { stable_plus, unstable_minus, phase_dim: nn });
    }
    let gap = |mu: &[Complex64], tol: f64| {
        mu.iter().filter(|z| z.re.abs() > tol).map(|z| z.re.abs()).fold(f64::INFINITY, f64::min)
    };
    let classes_plus = classify_modes(&mu_p, &es.family.star_plus, &es.family.visc_plus, es.lambda);
    let classes_minus = classify_modes(&mu_m, &es.family.star_minus, &es.family.visc_minus, es.lambda);
    Ok(SplittingCertificate {
        lambda: es.lambda,
        xi_tilde: es.family.xi_tilde.clone(),
        gap_plus: gap(&mu_p, tol_p),
        gap_minus: gap(&mu_m, tol_m),
        mu_plus: mu_p,
        mu_minus: mu_m,
        stable_plus,
        unstable_minus,
        center_plus,
        center_minus,
        classes_plus,
        classes_minus,
    })
}

struct BoundaryFrames {
    frame_plus: CMat,
    sigma_plus: Complex64,
    mu_plus: Vec<Complex64>,
    frame_minus: CMat,
    sigma_minus: Complex64,
    mu_minus: Vec<Complex64>,
}

/// Orthonormal bases of the strict stable (+) and unstable (-) invariant
/// subspaces together with the eigenvalue sums used for trace subtraction.
/// The selection threshold sits strictly between the center tolerance and
/// the strict gap so centers allowed at the origin are never picked up.
fn boundary_frames(es: &EvansSystem, cert: &SplittingCertificate) -> BoundaryFrames {
    let thr_p = 0.5 * (cert.gap_plus + center_tol(&es.a_plus));
    let (qp, tp, kp) = ordered_schur(&es.a_plus, |z| z.re < -thr_p);
    assert_eq!(kp, cert.stable_plus, "schur selection disagrees with the eigenvalue count");
    let mu_plus: Vec<Complex64> = (0..kp).map(|j| tp[(j, j)]).collect();
    let sigma_plus: Complex64 = mu_plus.iter().sum();

    let thr_m = 0.5 * (cert.gap_minus + center_tol(&es.a_minus));
    let (qm, tm, km) = ordered_schur(&es.a_minus, |z| z.re > thr_m);
    assert_eq!(km, cert.unstable_minus, "schur selection disagrees with the eigenvalue count");
    let mu_minus: Vec<Complex64> = (0..km).map(|j| tm[(j, j)]).collect();
    let sigma_minus: Complex64 = mu_minus.iter().sum();

    BoundaryFrames {
        frame_plus: qp.columns(0, kp).into_owned(),
        sigma_plus,
        mu_plus,
        frame_minus: qm.columns(0, km).into_owned(),
        sigma_minus,
        mu_minus,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvansMethod {
    /// Exterior-power (compound matrix) integration; exact linearity in the
    /// wedge coordinates, preferred for small phase dimension.
    CompoundMatrix,
    /// Continuous orthogonalization of the subspace frames with a separate
    /// scalar radial equation for the removed growth.
    ContinuousOrthogonalization,
    /// Compound matrix up to phase dimension 6, orthogonalization above.
    Auto,
}

fn resolve_method(method: EvansMethod, nn: usize) -> EvansMethod {
    match method {
        EvansMethod::Auto => {
            if nn <= 6 {
                EvansMethod::CompoundMatrix
            } else {
                EvansMethod::ContinuousOrthogonalization
            }
        }
        other => other,
    }
}

/// One Evans determinant value in mantissa/log form: the analytically
/// normalized value is `value * exp(log_normalization)`. The mantissa stays
/// O(1); magnitudes are compared through `log_abs`.
#[derive(Debug, Clone)]
pub struct EvansEvaluation {
    pub value: Complex64,
    pub log_normalization: Complex64,
    pub half_length: f64,
    pub method: EvansMethod,
    pub splitting: SplittingCertificate,
}

impl EvansEvaluation {
    pub fn log_abs(&self) -> f64 {
        self.value.norm().ln() + self.log_normalization.re
    }

    /// Exponentiated value; may overflow for extreme normalizations, in
    /// which case compare `log_abs` instead.
    pub fn d(&self) -> Complex64 {
        self.value * self.log_normalization.exp()
    }

    /// Relative difference that never exponentiates a growing factor.
    pub fn rel_diff(&self, other: &EvansEvaluation) -> f64 {
        let dl = self.log_normalization - other.log_normalization;
        if dl.re <= 0.0 {
            (self.value * dl.exp() - other.value).norm() / other.value.norm().max(1e-300)
        } else {
            (other.value * (-dl).exp() - self.value).norm() / self.value.norm().max(1e-300)
        }
    }
}

/// Evaluate the Evans determinant at the frozen frequency. The integration
/// interval may be shortened below the profile half-length; the trace
/// subtraction makes the result invariant under lengthening it.
pub fn evans_evaluate(
    es: &EvansSystem,
    method: EvansMethod,
    half_length: Option<f64>,
) -> Result<EvansEvaluation, EvansError> {
    let cert = limiting_splitting(es)?;
    let l = half_length.unwrap_or_else(|| es.family.profile.half_length());
    let frames = boundary_frames(es, &cert);
    let chosen = resolve_method(method, es.n_phase());
    let (value, lognorm) = evaluate_with_frames(
        es,
        l,
        &frames.frame_plus,
        frames.sigma_plus,
        &frames.frame_minus,
        frames.sigma_minus,
        chosen,
    )?;
    Ok(EvansEvaluation { value, log_normalization: lognorm, half_length: l, method: chosen, splitting: cert })
}

fn evaluate_with_frames(
    es: &EvansSystem,
    l: f64,
    frame_plus: &CMat,
    sigma_plus: Complex64,
    frame_minus: &CMat,
    sigma_minus: Complex64,
    method: EvansMethod,
) -> Result<(Complex64, Complex64), EvansError> {
    let nn = es.n_phase();
    match method {
        EvansMethod::CompoundMatrix => {
            let kp = frame_plus.ncols();
            let combos_p = combinations(nn, kp);
            let combos_m = combinations(nn, nn - kp);
            let (wp, lp) = integrate_compound(es, frame_plus, sigma_plus, l, &combos_p)?;
            let (wm, lm) = integrate_compound(es, frame_minus, sigma_minus, -l, &combos_m)?;
            Ok((laplace_pair(&wp, &wm, &combos_p, &combos_m), Complex64::new(lp + lm, 0.0)))
        }
        EvansMethod::ContinuousOrthogonalization => {
            let (qp, lp) = integrate_ortho(es, frame_plus, sigma_plus, l)?;
            let (qm, lm) = integrate_ortho(es, frame_minus, sigma_minus, -l)?;
            let mut m = CMat::zeros(nn, nn);
            m.view_mut((0, 0), (nn, qp.ncols())).copy_from(&qp);
            m.view_mut((0, qp.ncols()), (nn, qm.ncols())).copy_from(&qm);
            Ok((m.determinant(), lp + lm))
        }
        EvansMethod::Auto => unreachable!("method resolved before dispatch"),
    }
}

// ---------------------------------------------------------------------------
// exterior powers

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        let need = k - cur.len();
        if n < need {
            return;
        }
        for v in start..=(n - need) {
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur = Vec::new();
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn combo_index(combos: &[Vec<usize>], c: &[usize]) -> usize {
    combos
        .binary_search_by(|probe| probe.as_slice().cmp(c))
        .expect("complement is a valid combination")
}

/// Pluecker coordinates of a frame: all k x k minors in lexicographic row
/// order.
fn wedge_coords(frame: &CMat, combos: &[Vec<usize>]) -> CVec {
    let k = frame.ncols();
    CVec::from_fn(combos.len(), |s, _| {
        let rows = &combos[s];
        CMat::from_fn(k, k, |i, j| frame[(rows[i], j)]).determinant()
    })
}

/// Induced operator on the k-th exterior power in the lexicographic minor
/// basis: replacing slot `j` of an index set by row `i` lands at sorted
/// position `q` with sign (-1)^{|q - j|}.
fn wedge_operator(a: &CMat, combos: &[Vec<usize>]) -> CMat {
    let c = combos.len();
    let k = if c > 0 { combos[0].len() } else { 0 };
    let n = a.nrows();
    let mut w = CMat::zeros(c, c);
    let mut target: Vec<usize> = Vec::with_capacity(k);
    for (ti, t) in combos.iter().enumerate() {
        for slot in 0..k {
            let from = t[slot];
            for i in 0..n {
                let aij = a[(i, from)];
                if aij.norm_sqr() == 0.0 {
                    continue;
                }
                if i == from {
                    w[(ti, ti)] += aij;
                    continue;
                }
                if t.binary_search(&i).is_ok() {
                    continue;
                }
                target.clear();
                target.extend(t.iter().enumerate().filter(|(s2, _)| *s2 != slot).map(|(_, v)| *v));
                let q = target.iter().take_while(|&&v| v < i).count();
                target.insert(q, i);
                let row = combo_index(combos, &target);
                let sign = if (q as i64 - slot as i64) % 2 == 0 { 1.0 } else { -1.0 };
                w[(row, ti)] += aij * sign;
            }
        }
    }
    w
}

/// Laplace expansion pairing: det[P | M] from the Pluecker coordinates of
/// the two frames, with the complementary-minor sign
/// (-1)^{sum(S) - k(k-1)/2} in 0-based row indices.
fn laplace_pair(wp: &CVec, wm: &CVec, combos_p: &[Vec<usize>], combos_m: &[Vec<usize>]) -> Complex64 {
    let k = combos_p.first().map_or(0, |c| c.len());
    let km = combos_m.first().map_or(0, |c| c.len());
    let n = k + km;
    if k == 0 || km == 0 {
        return wp[0] * wm[0];
    }
    let base = k * (k - 1) / 2;
    let mut total = Complex64::new(0.0, 0.0);
    let mut comp: Vec<usize> = Vec::with_capacity(km);
    for (si, s) in combos_p.iter().enumerate() {
        comp.clear();
        let mut ptr = 0;
        for v in 0..n {
            if ptr < s.len() && s[ptr] == v {
                ptr += 1;
            } else {
                comp.push(v);
            }
        }
        let sum: usize = s.iter().sum();
        let sign = if (sum + base) % 2 == 0 { 1.0 } else { -1.0 };
        total += wp[si] * wm[combo_index(combos_m, &comp)] * sign;
    }
    total
}

// ---------------------------------------------------------------------------
// adaptive integration

const RK_C: [f64; 5] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];
const RK_A2: [f64; 1] = [1.0 / 5.0];
const RK_A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const RK_A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const RK_A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const RK_A6: [f64; 5] =
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const RK_B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
const RK_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn linear_combination(base: &CVec, h: f64, terms: &[(f64, &CVec)]) -> CVec {
    let mut out = base.clone();
    for (c, k) in terms {
        if *c != 0.0 {
            out.axpy(Complex64::new(c * h, 0.0), k, Complex64::new(1.0, 0.0));
        }
    }
    out
}

/// Embedded 5(4) pair with a first-same-as-last final stage. `on_accept`
/// may rewrite the state after an accepted step (frame re-orthogonalization,
/// mantissa rescaling); returning true forces a fresh derivative.
fn integrate_adaptive(
    mut rhs: impl FnMut(f64, &CVec) -> CVec,
    mut on_accept: impl FnMut(f64, &mut CVec) -> bool,
    y0: CVec,
    x0: f64,
    x1: f64,
    rtol: f64,
    max_steps: usize,
) -> Result<CVec, EvansError> {
    let span = x1 - x0;
    if span == 0.0 {
        return Ok(y0);
    }
    let dir = span.signum();
    let hmin = span.abs() * 1e-10;
    let mut x = x0;
    let mut y = y0;
    let mut h = span / 512.0;
    let mut k1 = rhs(x, &y);
    for _ in 0..max_steps {
        let remaining = x1 - x;
        if remaining * dir <= 1e-14 * span.abs() {
            return Ok(y);
        }
        if h.abs() > remaining.abs() {
            h = remaining;
        }
        let k2 = rhs(x + RK_C[0] * h, &linear_combination(&y, h, &[(RK_A2[0], &k1)]));
        let k3 = rhs(x + RK_C[1] * h, &linear_combination(&y, h, &[(RK_A3[0], &k1), (RK_A3[1], &k2)]));
        let k4 = rhs(
            x + RK_C[2] * h,
            &linear_combination(&y, h, &[(RK_A4[0], &k1), (RK_A4[1], &k2), (RK_A4[2], &k3)]),
        );
        let k5 = rhs(
            x + RK_C[3] * h,
            &linear_combination(
                &y,
                h,
                &[(RK_A5[0], &k1), (RK_A5[1], &k2), (RK_A5[2], &k3), (RK_A5[3], &k4)],
            ),
        );
        let k6 = rhs(
            x + h,
            &linear_combination(
                &y,
                h,
                &[(RK_A6[0], &k1), (RK_A6[1], &k2), (RK_A6[2], &k3), (RK_A6[3], &k4), (RK_A6[4], &k5)],
            ),
        );
        let y5 = linear_combination(
            &y,
            h,
            &[(RK_B[0], &k1), (RK_B[2], &k3), (RK_B[3], &k4), (RK_B[4], &k5), (RK_B[5], &k6)],
        );
        let k7 = rhs(x + h, &y5);
        let edef = linear_combination(
            &CVec::zeros(y.len()),
            h,
            &[
                (RK_E[0], &k1),
                (RK_E[2], &k3),
                (RK_E[3], &k4),
                (RK_E[4], &k5),
                (RK_E[5], &k6),
                (RK_E[6], &k7),
            ],
        );
        let atol = 1e-14 * y.camax().max(y5.camax()) + 1e-290;
        let mut acc = 0.0f64;
        for i in 0..y.len() {
            let w = atol + rtol * y[i].norm().max(y5[i].norm());
            let ratio = edef[i].norm() / w;
            acc += ratio * ratio;
        }
        let err = (acc / y.len() as f64).sqrt();
        if err <= 1.0 {
            x += h;
            y = y5;
            let modified = on_accept(x, &mut y);
            k1 = if modified { rhs(x, &y) } else { k7 };
        }
        let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
        h *= fac;
        if h.abs() < hmin {
            return Err(EvansError::Stiffness { x1: x, step: h });
        }
    }
    Err(EvansError::Stiffness { x1: x, step: h })
}

/// Integrate the trace-subtracted exterior-power flow from one endpoint to
/// the matching point. Returns the wedge coordinates and the accumulated
/// real log of mantissa rescalings.
fn integrate_compound(
    es: &EvansSystem,
    frame: &CMat,
    sigma: Complex64,
    x_from: f64,
    combos: &[Vec<usize>],
) -> Result<(CVec, f64), EvansError> {
    let raw = wedge_coords(frame, combos);
    let nrm = raw.norm();
    let y0 = raw.unscale(nrm);
    let mut logsum = nrm.ln();
    let rhs = |x: f64, y: &CVec| -> CVec {
        let a = es.coefficient(x);
        let w = wedge_operator(&a, combos);
        let mut dy = &w * y;
        dy.axpy(-sigma, y, Complex64::new(1.0, 0.0));
        dy
    };
    let on_accept = |_x: f64, y: &mut CVec| -> bool {
        let m = y.camax();
        if m > 0.0 && !(1e-100..=1e100).contains(&m) {
            let nrm = y.norm();
            *y = y.unscale(nrm);
            logsum += nrm.ln();
            true
        } else {
            false
        }
    };
    let y = integrate_adaptive(rhs, on_accept, y0, x_from, 0.0, 1e-10, 200_000)?;
    Ok((y, logsum))
}

/// Integrate the frame with the growth removed: dQ = (I - Q Q*) A Q with a
/// scalar companion log-radius dr = tr(Q* A Q) - sigma, re-orthogonalizing
/// whenever the Gram defect exceeds 1e-9 and absorbing the triangular
/// factor into the log.
fn integrate_ortho(
    es: &EvansSystem,
    frame: &CMat,
    sigma: Complex64,
    x_from: f64,
) -> Result<(CMat, Complex64), EvansError> {
    let nn = frame.nrows();
    let k = frame.ncols();
    let pack = |q: &CMat, logr: Complex64| -> CVec {
        let mut y = CVec::zeros(nn * k + 1);
        for j in 0..k {
            for i in 0..nn {
                y[j * nn + i] = q[(i, j)];
            }
        }
        y[nn * k] = logr;
        y
    };
    let unpack = |y: &CVec| CMat::from_fn(nn, k, |i, j| y[j * nn + i]);
    let mut degenerate: Option<(f64, f64)> = None;
    let rhs = |x: f64, y: &CVec| -> CVec {
        let q = unpack(y);
        let a = es.coefficient(x);
        let aq = &a * &q;
        let m = q.adjoint() * &aq;
        let dq = &aq - &q * &m;
        pack(&dq, m.trace() - sigma)
    };
    let on_accept = |x: f64, y: &mut CVec| -> bool {
        let q = unpack(y);
        let defect = (q.adjoint() * &q - CMat::identity(k, k)).norm();
        if defect <= 1e-9 {
            return false;
        }
        let qr = q.qr();
        let qq = qr.q();
        let rr = qr.r();
        let mut extra = Complex64::new(0.0, 0.0);
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for j in 0..k {
            let d = rr[(j, j)];
            dmin = dmin.min(d.norm());
            dmax = dmax.max(d.norm());
            extra += d.ln();
        }
        if dmin < 1e-13 * dmax.max(1e-300) {
            degenerate = Some((x, dmax / dmin.max(1e-300)));
        }
        let logr = y[nn * k] + extra;
        *y = pack(&qq, logr);
        true
    };
    let y0 = pack(frame, Complex64::new(0.0, 0.0));
    let y = integrate_adaptive(rhs, on_accept, y0, x_from, 0.0, 1e-10, 200_000)?;
    if let Some((x1, cond)) = degenerate {
        return Err(EvansError::FrameDegeneracy { x1, cond });
    }
    let q = unpack(&y);
    let mut logr = y[nn * k];
    // Final polish so the determinant sees exactly orthonormal columns.
    let qr = q.qr();
    let qq = qr.q();
    let rr = qr.r();
    for j in 0..k {
        logr += rr[(j, j)].ln();
    }
    Ok((qq, logr))
}

// ---------------------------------------------------------------------------
// contour winding

/// One accepted contour point. `d` carries the full phase of the
/// analytically continued determinant but only the mantissa magnitude; the
/// true magnitude is `|d| * exp(re_log_normalization)`.
#[derive(Debug, Clone)]
pub struct ContourSample {
    pub lambda: Complex64,
    pub d: Complex64,
    pub log_abs: f64,
    pub re_log_normalization: f64,
}

fn make_sample(lambda: Complex64, v: Complex64, tlog: Complex64) -> ContourSample {
    ContourSample {
        lambda,
        d: v * Complex64::new(0.0, tlog.im).exp(),
        log_abs: v.norm().ln() + tlog.re,
        re_log_normalization: tlog.re,
    }
}

#[derive(Debug)]
pub struct WindingComputation {
    pub winding: i64,
    pub turn_sum: f64,
    pub evaluations: usize,
    pub min_log_abs_d: f64,
    pub max_log_abs_d: f64,
    pub closure_drift: f64,
    pub samples: Vec<ContourSample>,
}

#[derive(Debug)]
pub enum WindingOutcome {
    Count(WindingComputation),
    /// The walk could not certify an integer: small determinant near the
    /// contour, branch collision, refinement depth or budget exhausted.
    Indeterminate { reason: String, evaluations: usize, samples: Vec<ContourSample> },
}

impl WindingOutcome {
    pub fn samples(&self) -> &[ContourSample] {
        match self {
            WindingOutcome::Count(w) => &w.samples,
            WindingOutcome::Indeterminate { samples, .. } => samples,
        }
    }

    pub fn count(&self) -> Option<i64> {
        match self {
            WindingOutcome::Count(w) => Some(w.winding),
            WindingOutcome::Indeterminate { .. } => None,
        }
    }
}

struct SideTrack {
    vals: Vec<Complex64>,
    frame: CMat,
    clog: Complex64,
    /// Distance from the tracked eigenvalue set to its complement at the
    /// current contour point (infinite before the first transport).
    sep: f64,
}

/// Continue one boundary subspace to a nearby matrix: match the tracked
/// eigenvalue set by proximity, apply the spectral projector of the matched
/// cluster to the previous frame, and absorb the triangular factor of the
/// re-orthogonalization into the running log. Closed loops return the
/// initial frame because the projector transport is holonomy-free.
fn transport_side(a_new: &CMat, track: &SideTrack) -> Result<SideTrack, String> {
    let eig = eigenvalues(a_new);
    let nn = eig.len();
    let k = track.vals.len();
    let scale = a_new.norm().max(1e-300);
    let mut used = vec![false; nn];
    let mut vals = Vec::with_capacity(k);
    for t in &track.vals {
        let mut bi = usize::MAX;
        let mut bd = f64::INFINITY;
        for i in 0..nn {
            if used[i] {
                continue;
            }
            let d = (eig[i] - t).norm();
            if d < bd {
                bd = d;
                bi = i;
            }
        }
        used[bi] = true;
        vals.push(eig[bi]);
    }
    let mut sep = f64::INFINITY;
    for (i, e) in eig.iter().enumerate() {
        if used[i] {
            continue;
        }
        for v in &vals {
            sep = sep.min((e - v).norm());
        }
    }
    if sep < 1e-9 * scale {
        return Err(format!("tracked branch collides with its complement (gap {sep:.3e})"));
    }
    let tol = 0.45 * sep;
    let (proj, kp) = spectral_projector(a_new, |z| vals.iter().any(|v| (z - v).norm() < tol));
    if kp != k {
        return Err(format!("tracked cluster resolved to dimension {kp}, expected {k}"));
    }
    let raw = &proj * &track.frame;
    let qr = raw.qr();
    let q = qr.q();
    let rr = qr.r();
    let mut clog = track.clog;
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for j in 0..k {
        let d = rr[(j, j)];
        dmin = dmin.min(d.norm());
        dmax = dmax.max(d.norm());
        clog += d.ln();
    }
    if dmax == 0.0 || dmin < 1e-12 * dmax {
        return Err(format!("transported frame degenerated (diagonal ratio {:.3e})", dmin / dmax.max(1e-300)));
    }
    if dmin < 0.25 {
        return Err(format!("transported frame misaligned (smallest diagonal {dmin:.3e}); subspace rotated too far in one step"));
    }
    Ok(SideTrack { vals, frame: q, clog, sep })
}

/// Walk a closed contour (vertices in order, positively oriented) and count
/// the enclosed Evans zeros. The walk starts at the vertex of largest real
/// part, transports both boundary frames step by step, inserts midpoints
/// whenever the determinant turns by more than roughly a quarter circle,
/// and certifies the count by returning to the start and checking that the
/// transported determinant closes on itself.
pub fn evans_winding(
    family: &EvansFamily,
    contour: &[Complex64],
    method: EvansMethod,
    budget: usize,
) -> Result<WindingOutcome, EvansError> {
    assert!(contour.len() >= 4, "contour needs at least 4 vertices");
    let m0 = contour.len();
    let start = (0..m0)
        .max_by(|&i, &j| contour[i].re.partial_cmp(&contour[j].re).unwrap())
        .unwrap();
    let pts: Vec<Complex64> = (0..m0).map(|i| contour[(start + i) % m0]).collect();

    let es0 = family.at(pts[0]);
    let cert0 = limiting_splitting(&es0)?;
    let frames = boundary_frames(&es0, &cert0);
    let l = family.profile.half_length();
    let chosen = resolve_method(method, es0.n_phase());

    let mut plus = SideTrack {
        vals: frames.mu_plus,
        frame: frames.frame_plus,
        clog: Complex64::new(0.0, 0.0),
        sep: f64::INFINITY,
    };
    let mut minus = SideTrack {
        vals: frames.mu_minus,
        frame: frames.frame_minus,
        clog: Complex64::new(0.0, 0.0),
        sep: f64::INFINITY,
    };

    let mut evaluations = 0usize;
    let eval_at = |es: &EvansSystem, pl: &SideTrack, mi: &SideTrack| -> Result<(Complex64, Complex64), EvansError> {
        let sp: Complex64 = pl.vals.iter().sum();
        let sm: Complex64 = mi.vals.iter().sum();
        let (v, ln) = evaluate_with_frames(es, l, &pl.frame, sp, &mi.frame, sm, chosen)?;
        Ok((v, ln + pl.clog + mi.clog))
    };

    let (v0, t0) = eval_at(&es0, &plus, &minus)?;
    evaluations += 1;
    let la0 = v0.norm().ln() + t0.re;
    let mut samples = vec![make_sample(pts[0], v0, t0)];
    if !la0.is_finite() {
        return Ok(WindingOutcome::Indeterminate {
            reason: format!("determinant vanishes at the basepoint {}", pts[0]),
            evaluations,
            samples,
        });
    }
    let mut max_la = la0;
    let mut min_la = la0;
    let mut turn = 0.0f64;
    let mut cur_lam = pts[0];
    let mut cur_v = v0;
    let mut cur_t = t0;

    let floor_drop = (1e12f64).ln();
    let mut pending: Vec<(Complex64, usize)> = Vec::with_capacity(m0 + 16);
    for i in (1..=m0).rev() {
        pending.push((pts[i % m0], 0));
    }

    while let Some((target, depth)) = pending.pop() {
        if evaluations >= budget {
            return Ok(WindingOutcome::Indeterminate {
                reason: format!("evaluation budget {budget} exhausted"),
                evaluations,
                samples,
            });
        }
        let es_t = family.at(target);
        // Transport failures are treated exactly like an oversized phase
        // step: the step was too long for the subspace rotation, so insert
        // a midpoint unless the failure persists at full refinement depth
        // (a genuine crossing on the contour).
        let transported = transport_side(&es_t.a_plus, &plus).and_then(|tp| {
            transport_side(&es_t.a_minus, &minus).map(|tm| (tp, tm))
        });
        let (tp, tm) = match transported {
            Ok(pair) => pair,
            Err(e) => {
                if depth >= 14 {
                    return Ok(WindingOutcome::Indeterminate {
                        reason: format!("transport near lambda = {target} keeps failing at refinement depth {depth}: {e}"),
                        evaluations,
                        samples,
                    });
                }
                pending.push((target, depth + 1));
                pending.push(((cur_lam + target) * Complex64::new(0.5, 0.0), depth + 1));
                continue;
            }
        };
        // Branch movement large relative to the branch separation means the
        // step under-resolves the subspace rotation: refine. This keeps the
        // greedy eigenvalue matching honest and the per-step transport error
        // quadratically small.
        let movement = |new: &SideTrack, old: &SideTrack| {
            new.vals
                .iter()
                .zip(&old.vals)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max)
        };
        if (movement(&tp, &plus) > 0.5 * tp.sep || movement(&tm, &minus) > 0.5 * tm.sep) && depth < 14 {
            pending.push((target, depth + 1));
            pending.push(((cur_lam + target) * Complex64::new(0.5, 0.0), depth + 1));
            continue;
        }
        let (v, tl) = eval_at(&es_t, &tp, &tm)?;
        evaluations += 1;
        let la = v.norm().ln() + tl.re;
        if !la.is_finite() || la < max_la - floor_drop {
            return Ok(WindingOutcome::Indeterminate {
                reason: format!(
                    "determinant magnitude collapses near lambda = {target}; a zero sits on or near the contour"
                ),
                evaluations,
                samples,
            });
        }
        let dphi = (v / cur_v).arg() + (tl.im - cur_t.im);
        if dphi.abs() <= FRAC_PI_2 - 0.15 {
            turn += dphi;
            cur_lam = target;
            cur_v = v;
            cur_t = tl;
            plus = tp;
            minus = tm;
            max_la = max_la.max(la);
            min_la = min_la.min(la);
            samples.push(make_sample(target, v, tl));
        } else {
            if depth >= 14 {
                return Ok(WindingOutcome::Indeterminate {
                    reason: format!(
                        "phase step {dphi:.3} rad persists at refinement depth {depth} near lambda = {target}"
                    ),
                    evaluations,
                    samples,
                });
            }
            pending.push((target, depth + 1));
            pending.push(((cur_lam + target) * Complex64::new(0.5, 0.0), depth + 1));
        }
    }

    // Closure: the continued determinant must return to its starting phase;
    // that is what certifies the turn sum. The magnitude picks up the
    // determinant of the chained projector transports, which differs from 1
    // at second order per step, so it only gates coarsely.
    let ratio = (cur_v / v0) * (cur_t - t0).exp();
    let drift = (ratio - Complex64::new(1.0, 0.0)).norm();
    let phase_drift = ratio.arg().abs();
    let mag_drift = (ratio.norm() - 1.0).abs();
    if phase_drift > 0.3 || mag_drift > 0.5 {
        return Ok(WindingOutcome::Indeterminate {
            reason: format!(
                "transported determinant fails to close (phase drift {phase_drift:.3e} rad, magnitude drift {mag_drift:.3e})"
            ),
            evaluations,
            samples,
        });
    }
    let wf = turn / TAU;
    let wr = wf.round();
    if (wf - wr).abs() > 0.05 {
        return Ok(WindingOutcome::Indeterminate {
            reason: format!("turn sum {turn:.6} rad is not an integer multiple of 2 pi"),
            evaluations,
            samples,
        });
    }
    Ok(WindingOutcome::Count(WindingComputation {
        winding: wr as i64,
        turn_sum: turn,
        evaluations,
        min_log_abs_d: min_la,
        max_log_abs_d: max_la,
        closure_drift: drift,
        samples,
    }))
}

/// Boundary of {|lambda| <= radius, Re lambda >= 0} with a clockwise notch
/// of radius `notch` around the origin, counterclockwise. The notch keeps
/// the translation zero outside the counted region.
pub fn half_disc_contour(radius: f64, notch: f64, points_per_arc: usize) -> Vec<Complex64> {
    assert!(radius > notch && notch > 0.0, "need radius > notch > 0");
    let na = points_per_arc.max(8);
    let ne = (na / 3).max(4);
    let nv = (na / 3).max(8);
    let mut pts = Vec::new();
    for i in 0..=na {
        let th = -FRAC_PI_2 + PI * i as f64 / na as f64;
        pts.push(Complex64::from_polar(radius, th));
    }
    for i in 1..ne {
        let y = radius + (notch - radius) * i as f64 / ne as f64;
        pts.push(Complex64::new(0.0, y));
    }
    for i in 0..=nv {
        let th = FRAC_PI_2 - PI * i as f64 / nv as f64;
        pts.push(Complex64::from_polar(notch, th));
    }
    for i in 1..ne {
        let y = -notch - (radius - notch) * i as f64 / ne as f64;
        pts.push(Complex64::new(0.0, y));
    }
    pts
}

/// Boundary of {|lambda| <= radius, Re lambda >= re_floor},
/// counterclockwise: a circular arc closed by a vertical chord.
pub fn arc_segment_contour(radius: f64, re_floor: f64, n_arc: usize) -> Vec<Complex64> {
    assert!(re_floor.abs() < radius, "chord must intersect the circle");
    let th = (re_floor / radius).acos();
    let na = n_arc.max(8);
    let nc = (na / 2).max(8);
    let mut pts = Vec::new();
    for i in 0..=na {
        let t = -th + 2.0 * th * i as f64 / na as f64;
        pts.push(Complex64::from_polar(radius, t));
    }
    let ymax = radius * th.sin();
    for i in 1..nc {
        let y = ymax - 2.0 * ymax * i as f64 / nc as f64;
        pts.push(Complex64::new(re_floor, y));
    }
    pts
}

/// High-frequency cutoff for right-half-plane spectrum: beyond
/// |lambda| ~ |A|^2 / theta_b the parabolic damping of the frozen symbols
/// dominates every convective term, so the default contour radius scales
/// with the squared coefficient bound over the ellipticity constant.
pub fn default_contour_radius(family: &EvansFamily) -> f64 {
    let sys = family.system;
    let prof = family.profile;
    let step = (prof.grid.len() / 24).max(1);
    let mut amax = 0.0f64;
    let mut bmin = f64::INFINITY;
    let shift = family.speed.abs() * (sys.n as f64).sqrt();
    for idx in (0..prof.grid.len()).step_by(step) {
        let u = &prof.values[idx];
        let up = &prof.derivs[idx];
        let mut an = linearized_flux_coefficient(sys, u, up, 0).norm() + shift;
        for (t, &xi) in family.xi_tilde.iter().enumerate() {
            an += xi.abs() * linearized_flux_coefficient(sys, u, up, t + 1).norm();
        }
        amax = amax.max(an);
        bmin = bmin.min(sys.lower_block_ellipticity(u, 8));
    }
    1.0 + 1.5 * amax * amax / bmin.max(1e-12)
}

/// Count enclosed zeros in a disc around `seed`, then refine the dominant
/// one by a damped secant-Newton iteration on the mantissa relative to a
/// fixed normalization reference.
#[derive(Debug, Clone)]
pub struct ZeroSearch {
    pub lambda: Complex64,
    pub enclosed: i64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Final |D| relative to the starting |D| of the iteration.
    pub residual_ratio: f64,
}

pub fn locate_zero(
    family: &EvansFamily,
    seed: Complex64,
    radius: f64,
    method: EvansMethod,
    budget: usize,
) -> Result<ZeroSearch, EvansError> {
    let circle: Vec<Complex64> =
        (0..24).map(|i| seed + Complex64::from_polar(radius, TAU * i as f64 / 24.0)).collect();
    let enclosed = match evans_winding(family, &circle, method, budget)? {
        WindingOutcome::Count(w) => w.winding,
        WindingOutcome::Indeterminate { reason, .. } => {
            return Err(EvansError::Winding(format!("enclosure count failed: {reason}")))
        }
    };
    if enclosed <= 0 {
        return Err(EvansError::Winding(format!(
            "no zero enclosed within {radius} of {seed} (winding {enclosed})"
        )));
    }
    let es_ref = family.at(seed);
    let reference = evans_evaluate(&es_ref, method, None)?;
    let logref = reference.log_normalization;
    let evaluations = std::cell::Cell::new(0usize);
    let f = |lam: Complex64| -> Result<Complex64, EvansError> {
        let es = family.at(lam);
        let e = evans_evaluate(&es, method, None)?;
        evaluations.set(evaluations.get() + 1);
        Ok(e.value * (e.log_normalization - logref).exp())
    };
    let mut lam = seed;
    let mut f0 = f(lam)?;
    let fstart = f0.norm();
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        if iterations > 40 {
            return Err(EvansError::Winding(format!("zero refinement stalled at {lam}")));
        }
        let h = 1e-6 * (1.0 + lam.norm());
        let fp = f(lam + Complex64::new(h, 0.0))?;
        let fm = f(lam - Complex64::new(h, 0.0))?;
        let der = (fp - fm) / (2.0 * h);
        if der.norm() == 0.0 {
            return Err(EvansError::Winding(format!("flat determinant at {lam}; cannot refine")));
        }
        let mut step = -f0 / der;
        let cap = 0.5 * radius;
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        lam += step;
        if (lam - seed).norm() > 2.0 * radius {
            return Err(EvansError::Winding(format!("refinement left the search disc at {lam}")));
        }
        f0 = f(lam)?;
        if step.norm() <= 1e-10 * (1.0 + lam.norm()) {
            break;
        }
        if evaluations.get() >= budget {
            return Err(EvansError::Winding(format!("refinement budget {budget} exhausted at {lam}")));
        }
    }
    Ok(ZeroSearch {
        lambda: lam,
        enclosed,
        iterations,
        evaluations: evaluations.get(),
        residual_ratio: f0.norm() / fstart.max(1e-300),
    })
}

/// Winding verdict for one transverse frequency.
#[derive(Debug)]
pub struct FrequencyVerdict {
    pub xi_tilde: Vec<f64>,
    pub contour_radius: f64,
    pub outcome: WindingOutcome,
}

/// Aggregate over a list of transverse frequencies: strong spectral
/// stability holds when every counted winding is zero on the notched
/// right-half-disc contour.
#[derive(Debug)]
pub struct SpectralVerdict {
    pub strong_spectral: bool,
    pub origin_ball: f64,
    pub per_frequency: Vec<FrequencyVerdict>,
    pub unstable_frequencies: Vec<Vec<f64>>,
    pub unresolved_frequencies: Vec<Vec<f64>>,
}

pub fn spectral_verdict(
    system: &SystemDefinition,
    profile: &ShockProfile,
    xi_list: &[Vec<f64>],
    radius: Option<f64>,
    origin_ball: f64,
    method: EvansMethod,
    budget_per_frequency: usize,
) -> SpectralVerdict {
    use rayon::prelude::*;
    let per_frequency: Vec<FrequencyVerdict> = xi_list
        .par_iter()
        .map(|xi| {
            let family = match build_evans_family(system, profile, xi) {
                Ok(f) => f,
                Err(e) => {
                    return FrequencyVerdict {
                        xi_tilde: xi.clone(),
                        contour_radius: f64::NAN,
                        outcome: WindingOutcome::Indeterminate {
                            reason: e.to_string(),
                            evaluations: 0,
                            samples: Vec::new(),
                        },
                    }
                }
            };
            let r = radius.unwrap_or_else(|| default_contour_radius(&family));
            let contour = half_disc_contour(r, origin_ball, 48);
            let outcome = match evans_winding(&family, &contour, method, budget_per_frequency) {
                Ok(o) => o,
                Err(e) => WindingOutcome::Indeterminate {
                    reason: e.to_string(),
                    evaluations: 0,
                    samples: Vec::new(),
                },
            };
            FrequencyVerdict { xi_tilde: xi.clone(), contour_radius: r, outcome }
        })
        .collect();
    let mut unstable = Vec::new();
    let mut unresolved = Vec::new();
    for fv in &per_frequency {
        match &fv.outcome {
            WindingOutcome::Count(w) if w.winding == 0 => {}
            WindingOutcome::Count(_) => unstable.push(fv.xi_tilde.clone()),
            WindingOutcome::Indeterminate { .. } => unresolved.push(fv.xi_tilde.clone()),
        }
    }
    SpectralVerdict {
        strong_spectral: !per_frequency.is_empty() && unstable.is_empty() && unresolved.is_empty(),
        origin_ball,
        per_frequency,
        unstable_frequencies: unstable,
        unresolved_frequencies: unresolved,
    }
}

/// CSV dump of contour samples: the `d` columns hold the unit-magnitude
/// mantissa with the true phase; multiply by exp(re_log_normalization) for
/// the full magnitude.
pub fn contour_csv(samples: &[ContourSample]) -> String {
    let mut out = String::from("re_lambda,im_lambda,re_d,im_d,re_log_normalization\n");
    for s in samples {
        out.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            s.lambda.re, s.lambda.im, s.d.re, s.d.im, s.re_log_normalization
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use crate::profile_solver::{ns_normal_shock, solve_profile, ShockTriple, SolveOptions};
    use crate::system_model::{burgers, elliptic_pocket, navier_stokes, GasParams};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(n, n, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    fn burgers_front(d: usize, half_length: f64, nodes: usize) -> (SystemDefinition, ShockProfile) {
        let sys = burgers(d);
        let triple =
            ShockTriple::new(&sys, RVec::from_element(1, 1.0), RVec::from_element(1, -1.0), 0.0);
        let profile = ShockProfile::from_exact(&sys, triple, half_length, nodes, |x| {
            let t = (x / 2.0).tanh();
            (RVec::from_element(1, -t), RVec::from_element(1, -(1.0 - t * t) / 2.0))
        })
        .unwrap();
        (sys, profile)
    }

    fn pocket_front(kappa: f64) -> (SystemDefinition, ShockProfile) {
        let sys = elliptic_pocket(kappa);
        let triple = ShockTriple::new(
            &sys,
            RVec::from_vec(vec![1.0, 0.0]),
            RVec::from_vec(vec![-1.0, 0.0]),
            0.0,
        );
        let profile = ShockProfile::from_exact(&sys, triple, 24.0, 768, |x| {
            let t = (x / 2.0).tanh();
            let s = 1.0 - t * t;
            (RVec::from_vec(vec![-t, s]), RVec::from_vec(vec![-s / 2.0, -t * s]))
        })
        .unwrap();
        (sys, profile)
    }

    fn ns_front(mach: f64) -> (SystemDefinition, ShockProfile) {
        let sys = navier_stokes(1, GasParams::reference());
        let sol = ns_normal_shock(&sys, mach).unwrap();
        let profile = solve_profile(&sys, &sol.triple, &SolveOptions::default()).unwrap();
        (sys, profile)
    }

    #[test]
    fn laplace_pairing_matches_the_full_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, k) in &[(4usize, 2usize), (5, 2), (6, 3), (5, 1), (5, 4)] {
            let m = random_cmat(n, &mut rng);
            let combos_p = combinations(n, k);
            let combos_m = combinations(n, n - k);
            let left = m.columns(0, k).into_owned();
            let right = m.columns(k, n - k).into_owned();
            let paired =
                laplace_pair(&wedge_coords(&left, &combos_p), &wedge_coords(&right, &combos_m), &combos_p, &combos_m);
            let direct = m.determinant();
            assert!(
                (paired - direct).norm() <= 1e-10 * direct.norm().max(1.0),
                "n={n} k={k}: paired {paired}, direct {direct}"
            );
        }
    }

    #[test]
    fn wedge_operator_is_the_exterior_derivative_of_the_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 5;
        let k = 2;
        let a = random_cmat(n, &mut rng);
        let combos = combinations(n, k);
        let q = random_cmat(n, &mut rng).columns(0, k).into_owned();
        let lhs = expm(&wedge_operator(&a, &combos)) * wedge_coords(&q, &combos);
        let rhs = wedge_coords(&(expm(&a) * &q), &combos);
        assert!((&lhs - &rhs).norm() <= 1e-9 * rhs.norm(), "wedge flow mismatch {:.3e}", (&lhs - &rhs).norm());
    }

    #[test]
    fn scalar_phase_matrix_is_the_flux_companion() {
        let (sys, profile) = burgers_front(1, 20.0, 256);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        let lambda = Complex64::new(0.37, 0.11);
        let es = family.at(lambda);
        let x = 0.8;
        let (u, _) = profile.eval(x);
        let a = es.coefficient(x);
        assert!((a[(0, 0)] - Complex64::new(u[0], 0.0)).norm() <= 1e-12);
        assert!((a[(0, 1)] - Complex64::new(1.0, 0.0)).norm() <= 1e-12);
        assert!((a[(1, 0)] - lambda).norm() <= 1e-12);
        assert!(a[(1, 1)].norm() <= 1e-12);
    }

    #[test]
    fn endpoint_spectrum_contains_zero_and_the_profile_rates() {
        let cases: Vec<(SystemDefinition, ShockProfile)> =
            vec![burgers_front(1, 20.0, 256), ns_front(1.1)];
        for (sys, profile) in &cases {
            let family = build_evans_family(sys, profile, &[]).unwrap();
            let es = family.at(Complex64::new(0.0, 0.0));
            for (a, m) in [(&es.a_plus, &profile.m_plus), (&es.a_minus, &profile.m_minus)] {
                let spec: Vec<Complex64> = eigenvalues(a).iter().copied().collect();
                let scale = a.norm().max(1.0);
                let near = |target: Complex64| {
                    spec.iter().map(|z| (z - target).norm()).fold(f64::INFINITY, f64::min)
                };
                assert!(near(Complex64::new(0.0, 0.0)) <= 1e-8 * scale, "missing zero mode");
                for mu in eigenvalues(&complexify(m)).iter() {
                    assert!(
                        near(*mu) <= 1e-7 * scale,
                        "{}: profile rate {mu} missing from endpoint spectrum {spec:?}",
                        sys.name
                    );
                }
            }
        }
    }

    #[test]
    fn translation_mode_solves_the_phase_system() {
        // For identity viscosity the profile ODE gives Ubar'' = dF(Ubar) Ubar'
        // exactly, so the residual of X = (Ubar', 0) is measured against the
        // exact derivative with no finite differencing.
        let cases: Vec<(SystemDefinition, ShockProfile)> =
            vec![burgers_front(1, 20.0, 256), pocket_front(16.0)];
        for (sys, profile) in &cases {
            let family = build_evans_family(sys, profile, &[]).unwrap();
            let es = family.at(Complex64::new(0.0, 0.0));
            let n = sys.n;
            for &x in &[-3.0, -0.7, 0.4, 2.2] {
                let (u, up) = profile.eval(x);
                let upp = sys.flux_jacobian(&u, 0) * &up;
                let nn = es.n_phase();
                let mut xv = CVec::zeros(nn);
                let mut xpv = CVec::zeros(nn);
                for i in 0..n {
                    xv[i] = Complex64::new(up[i], 0.0);
                    xpv[i] = Complex64::new(upp[i], 0.0);
                }
                let a = es.coefficient(x);
                let res = (&a * &xv - &xpv).norm();
                let scale = a.norm() * xv.norm();
                assert!(res <= 1e-8 * scale.max(1e-12), "{} at x={x}: residual {res:.3e}", sys.name);
            }
        }
    }

    #[test]
    fn endpoint_modes_satisfy_the_characteristic_equation() {
        let sys = navier_stokes(2, GasParams::reference());
        let sol = ns_normal_shock(&sys, 1.2).unwrap();
        let triple = sol.triple;
        let xi = [0.6];
        let lambda = Complex64::new(0.3, 0.4);
        let zero = RVec::zeros(sys.n);
        for u in [triple.plus(), triple.minus()] {
            let a = phase_matrix(&sys, &u, &zero, triple.s, &xi, lambda).unwrap();
            let n = sys.n;
            let mut a1 = sys.flux_jacobian(&u, 0);
            for i in 0..n {
                a1[(i, i)] -= triple.s;
            }
            let b11 = complexify(&sys.viscosity(&u, 0, 0));
            let axi = complexify(&(sys.flux_jacobian(&u, 1) * xi[0]));
            let bxi1 = complexify(&(sys.viscosity(&u, 1, 0) * xi[0]));
            let b1xi = complexify(&(sys.viscosity(&u, 0, 1) * xi[0]));
            let bxixi = complexify(&(sys.viscosity(&u, 1, 1) * (xi[0] * xi[0])));
            let im = Complex64::new(0.0, 1.0);
            let a1c = complexify(&a1);
            for mu in eigenvalues(&a).iter() {
                let m = &b11 * (mu * mu) - (&a1c - (&bxi1 + &b1xi) * im) * *mu
                    - (&axi * im + &bxixi + CMat::identity(n, n) * lambda);
                let rows: f64 = (0..n).map(|i| m.row(i).norm().max(1e-300)).product();
                let rel = m.determinant().norm() / rows;
                assert!(rel <= 1e-8, "mu = {mu}: relative characteristic residual {rel:.3e}");
            }
        }
    }

    #[test]
    fn phase_flow_solves_the_second_order_eigenvalue_equation() {
        // Integrate one decaying solution from +L and check the grouped flux
        // identity Phi' = lambda U + i A^xi U + B^xixi U - i B^xi1 U' on a
        // fine grid by high-order differencing of Phi itself. This is the
        // original second-order eigenvalue equation with the exact
        // derivatives regrouped, so it validates every block of the
        // assembled coefficient, Hessian term included.
        let cases: Vec<(SystemDefinition, ShockProfile, Vec<f64>, Complex64)> = vec![
            {
                let (s, p) = burgers_front(1, 20.0, 256);
                (s, p, vec![], Complex64::new(0.5, 0.0))
            },
            {
                let (s, p) = ns_front(1.1);
                (s, p, vec![], Complex64::new(0.4, 0.2))
            },
            {
                let (s, p) = burgers_front(2, 20.0, 256);
                (s, p, vec![0.7], Complex64::new(0.3, 0.6))
            },
        ];
        for (sys, profile, xi, lambda) in &cases {
            let family = build_evans_family(sys, profile, xi).unwrap();
            let es = family.at(*lambda);
            let cert = limiting_splitting(&es).unwrap();
            let frames = boundary_frames(&es, &cert);
            let l = profile.half_length().min(12.0);
            let n = sys.n;

            // March one decaying mode from +L down to 0 with fixed-step RK4,
            // storing the shifted state on a uniform grid; the eigenvalue
            // shift keeps it O(1).
            let h = 0.005;
            let m = (l / h).round() as usize;
            let mut xs = Vec::with_capacity(m + 1);
            let mut states: Vec<CVec> = Vec::with_capacity(m + 1);
            let mut y: CVec = frames.frame_plus.column(0).into_owned();
            let mu0 = frames.mu_plus[0];
            let rhs = |x: f64, v: &CVec| {
                let a = es.coefficient(x);
                let mut dv = &a * v;
                dv.axpy(-mu0, v, Complex64::new(1.0, 0.0));
                dv
            };
            xs.push(l);
            states.push(y.clone());
            let sub = 4usize;
            let hs = -h / sub as f64;
            for step in 0..m {
                let mut x = l - step as f64 * h;
                for _ in 0..sub {
                    let k1 = rhs(x, &y);
                    let k2 = rhs(x + hs / 2.0, &linear_combination(&y, hs, &[(0.5, &k1)]));
                    let k3 = rhs(x + hs / 2.0, &linear_combination(&y, hs, &[(0.5, &k2)]));
                    let k4 = rhs(x + hs, &linear_combination(&y, hs, &[(1.0, &k3)]));
                    y = linear_combination(
                        &y,
                        hs / 6.0,
                        &[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)],
                    );
                    x += hs;
                }
                xs.push(l - (step + 1) as f64 * h);
                states.push(y.clone());
            }

            // Recover U, U' and Phi at every node.
            let mut us: Vec<CVec> = Vec::with_capacity(states.len());
            let mut phis: Vec<CVec> = Vec::with_capacity(states.len());
            let mut rhs_vals: Vec<CVec> = Vec::with_capacity(states.len());
            for (x, st) in xs.iter().zip(&states) {
                let a = es.coefficient(*x);
                let mut dstate = &a * st;
                dstate.axpy(-mu0, st, Complex64::new(1.0, 0.0));
                let u = CVec::from_fn(n, |i, _| st[i]);
                // U' of the unshifted solution: e^{mu0 x} scaling cancels in
                // the residual below because every term carries it, so work
                // with the shifted variables and add mu0 U back.
                let upr = CVec::from_fn(n, |i, _| dstate[i] + mu0 * st[i]);
                let (ub, _) = profile.eval(*x);
                let mut a1 = linearized_flux_coefficient(sys, &ub, &profile.eval(*x).1, 0);
                for i in 0..n {
                    a1[(i, i)] -= family.speed;
                }
                let b11 = complexify(&sys.viscosity(&ub, 0, 0));
                let mut b1xi = CMat::zeros(n, n);
                let mut bxi1 = CMat::zeros(n, n);
                let mut axi = CMat::zeros(n, n);
                let mut bxixi = CMat::zeros(n, n);
                for (t, &xv) in xi.iter().enumerate() {
                    let j = t + 1;
                    b1xi += complexify(&(sys.viscosity(&ub, 0, j) * xv));
                    bxi1 += complexify(&(sys.viscosity(&ub, j, 0) * xv));
                    axi += complexify(&(linearized_flux_coefficient(sys, &ub, &profile.eval(*x).1, j) * xv));
                    for (t2, &xv2) in xi.iter().enumerate() {
                        bxixi += complexify(&(sys.viscosity(&ub, j, t2 + 1) * (xv * xv2)));
                    }
                }
                let im = Complex64::new(0.0, 1.0);
                let phi = &b11 * &upr - complexify(&a1) * &u + &b1xi * &u * im;
                let rhsv = &u * *lambda + &axi * &u * im + &bxixi * &u - &bxi1 * &upr * im;
                us.push(u);
                phis.push(phi);
                rhs_vals.push(rhsv);
            }

            // Fourth-order centered derivative of Phi (the shifted Phi obeys
            // Phi' = rhs - mu0 Phi).
            let mut checked = 0usize;
            let mut worst: f64 = 0.0;
            let scale = us.iter().map(|u| u.norm()).fold(0.0f64, f64::max)
                * (1.0 + es.coefficient(0.0).norm());
            for idx in 2..xs.len() - 2 {
                if idx % 7 != 0 {
                    continue;
                }
                let d = (&phis[idx - 2] - &phis[idx + 2] + (&phis[idx + 1] - &phis[idx - 1]).scale(8.0))
                    .unscale(-12.0 * h);
                let res = (&d - &rhs_vals[idx] + &phis[idx] * mu0).norm();
                worst = worst.max(res / scale.max(1e-300));
                checked += 1;
            }
            assert!(checked > 50, "{}: too few interior nodes checked", sys.name);
            assert!(worst <= 2e-7, "{}: grouped-identity residual {worst:.3e}", sys.name);
        }
    }

    #[test]
    fn scalar_splitting_matches_the_quadratic_roots() {
        let (sys, profile) = burgers_front(1, 20.0, 256);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        let lambda = Complex64::new(1.0, 0.0);
        let es = family.at(lambda);
        let cert = limiting_splitting(&es).unwrap();
        assert_eq!(cert.stable_plus, 1);
        assert_eq!(cert.unstable_minus, 1);
        // mu = (a +/- sqrt(a^2 + 4 lambda)) / 2 with a = -1 on the plus side.
        for (a, mus) in [(-1.0, &cert.mu_plus), (1.0, &cert.mu_minus)] {
            let disc = (Complex64::new(a * a, 0.0) + 4.0 * lambda).sqrt();
            for mu in [(Complex64::new(a, 0.0) + disc) / 2.0, (Complex64::new(a, 0.0) - disc) / 2.0] {
                let best = mus.iter().map(|z| (z - mu).norm()).fold(f64::INFINITY, f64::min);
                assert!(best <= 1e-10, "root {mu} missing from {mus:?}");
            }
        }
        assert!((cert.gap_plus - ((5.0f64).sqrt() - 1.0) / 2.0).abs() <= 1e-10);
    }

    #[test]
    fn large_lambda_splitting_is_parabolic_dominated() {
        let (sys, profile) = ns_front(1.1);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        let mut counts = Vec::new();
        for &lam in &[1e2, 1e3, 1e4] {
            let es = family.at(Complex64::new(lam, 0.0));
            let cert = limiting_splitting(&es).unwrap();
            counts.push((cert.stable_plus, cert.unstable_minus));
            if lam == 1e4 {
                for classes in [&cert.classes_plus, &cert.classes_minus] {
                    let hyp = classes.iter().filter(|c| c.class == ModeClass::Hyperbolic).count();
                    let par = classes.iter().filter(|c| c.class == ModeClass::Parabolic).count();
                    assert_eq!(hyp, 1, "one relaxed characteristic root expected: {classes:?}");
                    assert_eq!(par, 4, "four viscous roots expected: {classes:?}");
                    for c in classes.iter() {
                        assert!(c.rel_err <= 5e-2, "asymptote error {:.3e} for {:?}", c.rel_err, c);
                    }
                }
            }
        }
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "splitting counts drifted: {counts:?}");
    }

    #[test]
    fn neutral_limiting_modes_are_rejected_off_origin() {
        let (sys, profile) = burgers_front(1, 20.0, 256);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        // lambda = -1 + i puts mu = i exactly on the plus-side limiting
        // matrix: an essential-spectrum frequency.
        let es = family.at(Complex64::new(-1.0, 1.0));
        match limiting_splitting(&es) {
            Err(EvansError::OutsideLambda { mu, .. }) => {
                assert!((mu - Complex64::new(0.0, 1.0)).norm() <= 1e-8, "unexpected mode {mu}");
            }
            other => panic!("expected OutsideLambda, got {other:?}"),
        }
    }

    #[test]
    fn origin_is_the_translation_zero_and_it_is_simple() {
        let (sys, profile) = burgers_front(1, 30.0, 512);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        let at = |lam: Complex64| {
            let es = family.at(lam);
            evans_evaluate(&es, EvansMethod::CompoundMatrix, None).unwrap()
        };
        let d0 = at(Complex64::new(0.0, 0.0));
        let d1 = at(Complex64::new(1.0, 0.0));
        let rel0 = d0.value.norm() * (d0.log_normalization.re - d1.log_normalization.re).exp()
            / d1.value.norm();
        assert!(rel0 <= 1e-7, "|D(0)|/|D(1)| = {rel0:.3e}");
        // One-sided derivative along the real axis stays away from zero.
        let h = 1e-3;
        let dh = at(Complex64::new(h, 0.0));
        let der = (dh.value * (dh.log_normalization - d1.log_normalization).exp()
            - d0.value * (d0.log_normalization - d1.log_normalization).exp())
            / h;
        assert!(
            der.norm() >= 1e-2 * d1.value.norm(),
            "derivative at the origin too small: {:.3e}",
            der.norm()
        );
    }

    #[test]
    fn real_frequencies_evaluate_real_and_length_invariant() {
        let (sys, profile) = burgers_front(1, 40.0, 768);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        let es = family.at(Complex64::new(1.0, 0.0));
        let e20 = evans_evaluate(&es, EvansMethod::CompoundMatrix, Some(20.0)).unwrap();
        let e40 = evans_evaluate(&es, EvansMethod::CompoundMatrix, Some(40.0)).unwrap();
        assert!(
            e20.value.im.abs() <= 1e-10 * e20.value.norm(),
            "conjugation symmetry forces a real value on the real axis: {}",
            e20.value
        );
        assert!(e20.value.norm() > 1e-6, "determinant collapsed: {}", e20.value);
        let rel = e20.rel_diff(&e40);
        assert!(rel <= 1e-6, "interval doubling moved the value by {rel:.3e}");
    }

    #[test]
    fn conjugate_frequencies_evaluate_conjugately() {
        let (sys, profile) = burgers_front(1, 20.0, 256);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        let lam = Complex64::new(0.3, 0.7);
        let ea = evans_evaluate(&family.at(lam), EvansMethod::CompoundMatrix, None).unwrap();
        let eb = evans_evaluate(&family.at(lam.conj()), EvansMethod::CompoundMatrix, None).unwrap();
        // Every pipeline primitive commutes with entrywise conjugation, so
        // the two mantissas are conjugate to rounding and the real rescale
        // logs agree.
        let rel = (eb.value - ea.value.conj()).norm() / ea.value.norm();
        assert!(rel <= 1e-10, "conjugation mismatch {rel:.3e}");
        assert!((ea.log_normalization.re - eb.log_normalization.re).abs() <= 1e-10);

        // With a transverse frequency the reflection xi -> -xi pairs with
        // conjugation of lambda.
        let (sys2, profile2) = burgers_front(2, 20.0, 256);
        let fam_p = build_evans_family(&sys2, &profile2, &[0.4]).unwrap();
        let fam_m = build_evans_family(&sys2, &profile2, &[-0.4]).unwrap();
        let lam2 = Complex64::new(0.2, 0.5);
        let ep = evans_evaluate(&fam_p.at(lam2), EvansMethod::CompoundMatrix, None).unwrap();
        let em = evans_evaluate(&fam_m.at(lam2.conj()), EvansMethod::CompoundMatrix, None).unwrap();
        let rel2 = (em.value - ep.value.conj()).norm() / ep.value.norm();
        assert!(rel2 <= 1e-10, "reflected conjugation mismatch {rel2:.3e}");
    }

    #[test]
    fn both_methods_agree() {
        let cases: Vec<(SystemDefinition, ShockProfile, Complex64)> = vec![
            {
                let (s, p) = burgers_front(1, 20.0, 256);
                (s, p, Complex64::new(0.8, 0.3))
            },
            {
                let (s, p) = pocket_front(16.0);
                (s, p, Complex64::new(0.5, 0.9))
            },
        ];
        for (sys, profile, lam) in &cases {
            let family = build_evans_family(sys, profile, &[]).unwrap();
            let es = family.at(*lam);
            let ec = evans_evaluate(&es, EvansMethod::CompoundMatrix, None).unwrap();
            let eo = evans_evaluate(&es, EvansMethod::ContinuousOrthogonalization, None).unwrap();
            let rel = ec.rel_diff(&eo);
            assert!(rel <= 1e-5, "{}: methods differ by {rel:.3e}", sys.name);
        }
    }

    #[test]
    fn winding_counts_the_translation_zero() {
        let (sys, profile) = burgers_front(1, 24.0, 384);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        // The chord at Re = -0.01 crosses the essential spectrum; the
        // tracked-branch transport continues the determinant through it.
        let enclosing = arc_segment_contour(4.0, -0.01, 40);
        let w1 = evans_winding(&family, &enclosing, EvansMethod::Auto, 4000).unwrap();
        assert_eq!(w1.count(), Some(1), "translation zero not counted: {w1:?}");
        let excluded = arc_segment_contour(4.0, 0.05, 40);
        let w0 = evans_winding(&family, &excluded, EvansMethod::Auto, 4000).unwrap();
        assert_eq!(w0.count(), Some(0), "shifted contour must be empty: {w0:?}");
        // Budget doubling cannot change a certified count.
        let w1b = evans_winding(&family, &enclosing, EvansMethod::Auto, 8000).unwrap();
        assert_eq!(w1.count(), w1b.count());
    }

    #[test]
    fn winding_and_refinement_find_the_engineered_instability() {
        let (sys, profile) = pocket_front(16.0);
        let family = build_evans_family(&sys, &profile, &[]).unwrap();
        let contour = arc_segment_contour(3.0, 0.02, 48);
        let w = evans_winding(&family, &contour, EvansMethod::Auto, 6000).unwrap();
        assert_eq!(w.count(), Some(2), "expected the unstable conjugate pair: {w:?}");
        let found = locate_zero(&family, Complex64::new(0.25, 0.85), 0.25, EvansMethod::Auto, 6000).unwrap();
        assert_eq!(found.enclosed, 1);
        let expect = Complex64::new(0.212, 0.902);
        assert!(
            (found.lambda - expect).norm() <= 2.5e-2,
            "unstable eigenvalue {} too far from the oracle {expect}",
            found.lambda
        );
        assert!(found.residual_ratio <= 1e-6, "residual ratio {:.3e}", found.residual_ratio);
    }

    #[test]
    fn spectral_verdict_separates_stable_from_engineered_unstable() {
        let (sys, profile) = burgers_front(1, 24.0, 384);
        let v = spectral_verdict(&sys, &profile, &[vec![]], None, 0.05, EvansMethod::Auto, 4000);
        assert!(v.strong_spectral, "scalar front must be strongly spectrally stable: {v:?}");

        let (psys, pprofile) = pocket_front(16.0);
        let vp = spectral_verdict(&psys, &pprofile, &[vec![]], Some(3.0), 0.05, EvansMethod::Auto, 6000);
        assert!(!vp.strong_spectral);
        assert_eq!(vp.unstable_frequencies.len(), 1);
        match &vp.per_frequency[0].outcome {
            WindingOutcome::Count(w) => assert_eq!(w.winding, 2),
            other => panic!("expected a count, got {other:?}"),
        }
    }

    #[test]
    fn contours_are_closed_counterclockwise_loops() {
        for contour in [
            half_disc_contour(2.0, 0.05, 24),
            arc_segment_contour(2.0, -0.01, 24),
            arc_segment_contour(2.0, 0.3, 24),
        ] {
            // Winding of z - c for an interior point c certifies closure and
            // orientation.
            let c = Complex64::new(1.0, 0.0);
            let w = crate::linalg::winding_number(&mut |z| Some(z - c), &contour, 12).unwrap();
            assert!((w - 1.0).abs() <= 1e-6, "interior point winding {w}");
            let outside = Complex64::new(-1.0, 1.5);
            let w0 = crate::linalg::winding_number(&mut |z| Some(z - outside), &contour, 12).unwrap();
            assert!(w0.abs() <= 1e-6, "exterior point winding {w0}");
        }
    }

    #[test]
    fn contour_csv_is_rectangular() {
        let samples = vec![
            make_sample(Complex64::new(1.0, 2.0), Complex64::new(0.5, -0.25), Complex64::new(3.0, 0.7)),
            make_sample(Complex64::new(0.0, -1.0), Complex64::new(-0.125, 0.75), Complex64::new(-2.0, 0.1)),
        ];
        let csv = contour_csv(&samples);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "re_lambda,im_lambda,re_d,im_d,re_log_normalization");
        assert_eq!(lines.len(), 3);
        for row in &lines[1..] {
            assert_eq!(row.split(',').count(), 5);
            for field in row.split(',') {
                field.parse::<f64>().unwrap();
            }
        }
    }
}
