//! Rankine-Hugoniot endpoint pairs, Lax shock classification with the
//! connection index, and traveling-wave profiles.
//!
//! The profile solver works in the model's natural-variable chart, where the
//! inviscid constraint (the first integral of the I-block) eliminates w_I
//! node-wise and midpoint collocation on w_II closes the system together
//! with invariant-manifold boundary projections and one phase condition.

use crate::linalg::{
    complexify, eigenvalues, linear_fit, real_invariant_basis, BandMatrix, RMat, RVec,
};
use crate::system_model::{ProfileChart, SystemDefinition};
use num_complex::Complex64;

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("state rejected: {0}")]
    Inadmissible(String),
    #[error("Rankine-Hugoniot closure unsupported for '{0}' with a prescribed speed")]
    UnsupportedClosure(String),
    #[error("no entropy-admissible branch: {0}")]
    NoBranch(String),
    #[error("characteristic endpoint: eigenvalue {0} within tolerance of the shock speed")]
    Characteristic(f64),
    #[error("degenerate rest point: Re eigenvalue {0} of the profile linearization")]
    DegenerateRestPoint(f64),
    #[error("index relation violated: d+ + d- - r = {0} but i+ + i- - n = {1}")]
    IndexMismatch(i64, i64),
    #[error("model has no profile chart")]
    NoChart,
    #[error("profile is not a pure Lax shock (ell = {0}); solver scope is ell = 1")]
    NotLax(i64),
    #[error("level set has no solution at w_II = {0:?}")]
    LevelSet(Vec<f64>),
    #[error("Newton iteration failed to converge: residual {0}")]
    NoConvergence(f64),
    #[error("certification failed: {0}")]
    Certification(String),
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ShockTriple {
    pub u_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
    pub s: f64,
    pub residual: f64,
}

impl ShockTriple {
    pub fn new(system: &SystemDefinition, u_minus: RVec, u_plus: RVec, s: f64) -> Self {
        let jump_flux = system.flux(&u_plus, 0) - system.flux(&u_minus, 0);
        let jump_u = &u_plus - &u_minus;
        let residual = (&jump_u * s - &jump_flux).norm();
        ShockTriple {
            u_minus: u_minus.iter().copied().collect(),
            u_plus: u_plus.iter().copied().collect(),
            s,
            residual,
        }
    }

    pub fn minus(&self) -> RVec {
        RVec::from_vec(self.u_minus.clone())
    }

    pub fn plus(&self) -> RVec {
        RVec::from_vec(self.u_plus.clone())
    }
}

pub enum RhClosure {
    /// Solve for U+ at the given speed; the entropy-admissible branch is
    /// selected and all real branches reported.
    GivenSpeed(f64),
    /// Compute the speed from a given U+ by least squares over the jump.
    GivenUPlus(RVec),
}

pub struct RhSolution {
    pub triple: ShockTriple,
    /// All real branches found, the trivial one included.
    pub branches: Vec<Vec<f64>>,
}

pub fn rankine_hugoniot(
    system: &SystemDefinition,
    u_minus: &RVec,
    closure: RhClosure,
) -> Result<RhSolution, ProfileError> {
    system.admissible(u_minus).map_err(|e| ProfileError::Inadmissible(e.to_string()))?;
    match closure {
        RhClosure::GivenUPlus(u_plus) => {
            system.admissible(&u_plus).map_err(|e| ProfileError::Inadmissible(e.to_string()))?;
            let jump_u = &u_plus - u_minus;
            let jump_f = system.flux(&u_plus, 0) - system.flux(u_minus, 0);
            let denom = jump_u.norm_squared();
            if denom < 1e-28 {
                return Err(ProfileError::NoBranch("zero jump; speed undetermined".into()));
            }
            let s = jump_u.dot(&jump_f) / denom;
            let triple = ShockTriple::new(system, u_minus.clone(), u_plus.clone(), s);
            let branches = vec![triple.u_plus.clone()];
            Ok(RhSolution { triple, branches })
        }
        RhClosure::GivenSpeed(s) => rh_given_speed(system, u_minus, s),
    }
}

fn rh_given_speed(
    system: &SystemDefinition,
    u_minus: &RVec,
    s: f64,
) -> Result<RhSolution, ProfileError> {
    let mut branches: Vec<Vec<f64>> = vec![u_minus.iter().copied().collect()];
    let u_plus = match system.name.as_str() {
        "burgers" => {
            let up = 2.0 * s - u_minus[0];
            branches.push(vec![up]);
            if (up - u_minus[0]).abs() < 1e-10 {
                return Err(ProfileError::NoBranch("sonic data: both branches coincide".into()));
            }
            RVec::from_element(1, up)
        }
        "coupled_burgers" => {
            if u_minus[1].abs() > 1e-12 {
                return Err(ProfileError::UnsupportedClosure(
                    "coupled_burgers speed closure needs v- = 0".into(),
                ));
            }
            let up = 2.0 * s - u_minus[0];
            branches.push(vec![up, 0.0]);
            RVec::from_vec(vec![up, 0.0])
        }
        "isentropic_ns" => isentropic_downstream(system, u_minus, s, &mut branches)?,
        name if name.starts_with("navier_stokes") => {
            gas_downstream(system, u_minus, s, &mut branches)?
        }
        other => return Err(ProfileError::UnsupportedClosure(other.to_string())),
    };
    // Newton polish on the full jump condition; the analytic branch is the
    // seed, the residual certificate is what matters.
    let target = system.flux(u_minus, 0) - u_minus * s;
    let mut u = u_plus;
    for _ in 0..40 {
        let res = system.flux(&u, 0) - &u * s - &target;
        if res.norm() < 1e-14 * (1.0 + target.norm()) {
            break;
        }
        let jac = system.flux_jacobian(&u, 0) - RMat::identity(system.n, system.n) * s;
        let step = jac
            .lu()
            .solve(&res)
            .ok_or_else(|| ProfileError::NoBranch("singular RH Jacobian".into()))?;
        u -= step;
    }
    system.admissible(&u).map_err(|e| ProfileError::Inadmissible(e.to_string()))?;
    let triple = ShockTriple::new(system, u_minus.clone(), u, s);
    Ok(RhSolution { triple, branches })
}

/// Downstream root of j^2/rho + a rho^gamma = Pi for isentropic gas
/// dynamics; requires supersonic relative upstream flow.
fn isentropic_downstream(
    system: &SystemDefinition,
    u_minus: &RVec,
    s: f64,
    branches: &mut Vec<Vec<f64>>,
) -> Result<RVec, ProfileError> {
    // Recover (gamma, a) from the flux itself to stay closure-free.
    let probe = |rho: f64| system.flux(&RVec::from_vec(vec![rho, 0.0]), 0)[1];
    let p1 = probe(1.0);
    let p2 = probe(2.0);
    let gamma = (p2 / p1).log2();
    let a = p1;
    let (rho_m, m_m) = (u_minus[0], u_minus[1]);
    let v_m = m_m / rho_m - s;
    let c_m = (a * gamma * rho_m.powf(gamma - 1.0)).sqrt();
    if v_m.abs() <= c_m * (1.0 + 1e-8) {
        return Err(ProfileError::NoBranch(format!(
            "relative upstream speed {v_m} not supersonic (c = {c_m})"
        )));
    }
    let j = rho_m * v_m;
    let pi = j * j / rho_m + a * rho_m.powf(gamma);
    let f = |rho: f64| j * j / rho + a * rho.powf(gamma) - pi;
    // Supersonic upstream: f decreases through rho-, so the compressive
    // root lies above; bracket outward then bisect.
    let mut lo = rho_m * 1.000001;
    let mut hi = rho_m * 2.0;
    let mut guard = 0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(ProfileError::NoBranch("no compressive density root".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho_p = 0.5 * (lo + hi);
    let v_p = j / rho_p;
    let u_plus = RVec::from_vec(vec![rho_p, rho_p * (v_p + s)]);
    branches.push(u_plus.iter().copied().collect());
    Ok(u_plus)
}

/// Ideal-gas normal-shock relations along x1 in the frame moving with s;
/// transverse velocities carry over unchanged.
fn gas_downstream(
    system: &SystemDefinition,
    u_minus: &RVec,
    s: f64,
    branches: &mut Vec<Vec<f64>>,
) -> Result<RVec, ProfileError> {
    let chart = system.chart.as_ref().ok_or(ProfileError::NoChart)?;
    let w = (chart.to_chart)(u_minus);
    let d = system.d;
    let (rho, t) = (w[0], w[d + 1]);
    // gamma and R from the sound speed and pressure of the model itself.
    let a1 = system.flux_jacobian(u_minus, 0);
    let eigs = eigenvalues(&complexify(&a1));
    let u1 = w[1];
    let c: f64 = eigs.iter().map(|z| (z.re - u1).abs()).fold(0.0, f64::max);
    let p = system.flux(u_minus, 0)[1] - rho * u1 * u1;
    let r_gas = p / (rho * t);
    let gamma = c * c / (r_gas * t);
    let v1 = u1 - s;
    let mach2 = v1 * v1 / (c * c);
    if (mach2 - 1.0).abs() < 1e-10 {
        return Err(ProfileError::NoBranch("sonic upstream data".into()));
    }
    if mach2 <= 1.0 {
        return Err(ProfileError::NoBranch(format!(
            "relative upstream Mach {} subsonic",
            mach2.sqrt()
        )));
    }
    let rho_p = rho * (gamma + 1.0) * mach2 / ((gamma - 1.0) * mach2 + 2.0);
    let p_p = p * (1.0 + 2.0 * gamma * (mach2 - 1.0) / (gamma + 1.0));
    let v_p = v1 * rho / rho_p;
    let t_p = p_p / (r_gas * rho_p);
    let mut w_p = RVec::zeros(d + 2);
    w_p[0] = rho_p;
    w_p[1] = v_p + s;
    for i in 1..d {
        w_p[1 + i] = w[1 + i];
    }
    w_p[d + 1] = t_p;
    let u_plus = (chart.from_chart)(&w_p);
    branches.push(u_plus.iter().copied().collect());
    Ok(u_plus)
}

/// Convenience constructor: a standing ideal-gas normal shock with upstream
/// density 1, temperature 1, and the given upstream Mach number.
pub fn ns_normal_shock(
    system: &SystemDefinition,
    mach: f64,
) -> Result<RhSolution, ProfileError> {
    let chart = system.chart.as_ref().ok_or(ProfileError::NoChart)?;
    let d = system.d;
    let mut w = RVec::zeros(d + 2);
    w[0] = 1.0;
    w[d + 1] = 1.0;
    // Sound speed from the symbol at the quiescent reference state.
    let u0 = (chart.from_chart)(&w);
    let a1 = system.flux_jacobian(&u0, 0);
    let c: f64 = eigenvalues(&complexify(&a1)).iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    w[1] = mach * c;
    let u_minus = (chart.from_chart)(&w);
    rankine_hugoniot(system, &u_minus, RhClosure::GivenSpeed(0.0))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ShockClassification {
    /// Characteristic family index (1-based); None when not a Lax shock.
    pub p: Option<usize>,
    pub i_plus: usize,
    pub i_minus: usize,
    pub d_plus: usize,
    pub d_minus: usize,
    pub ell_hat: i64,
    pub lax: bool,
}

/// Blocks of alpha = (A^1 - s I) dU/dW at a chart point, split (n-r, r).
fn alpha_matrix(system: &SystemDefinition, chart: &ProfileChart, w: &RVec, s: f64) -> RMat {
    let u = (chart.from_chart)(w);
    let a = system.flux_jacobian(&u, 0) - RMat::identity(system.n, system.n) * s;
    a * (chart.jacobian)(w)
}

/// Endpoint linearization M of the reduced profile ODE at a rest point.
pub fn profile_linearization(
    system: &SystemDefinition,
    chart: &ProfileChart,
    w: &RVec,
    s: f64,
) -> Result<RMat, ProfileError> {
    let (n, r) = (system.n, system.r);
    let alpha = alpha_matrix(system, chart, w, s);
    let vr = (chart.viscous_rows)(w);
    if r == n {
        let bb = vr;
        return bb
            .lu()
            .solve(&alpha)
            .ok_or_else(|| ProfileError::LevelSet(w.iter().copied().collect()));
    }
    let k = n - r;
    let a11 = alpha.view((0, 0), (k, k)).into_owned();
    let a12 = alpha.view((0, k), (k, r)).into_owned();
    let a21 = alpha.view((k, 0), (r, k)).into_owned();
    let a22 = alpha.view((k, k), (r, r)).into_owned();
    let dphi = -a11
        .lu()
        .solve(&a12)
        .ok_or_else(|| ProfileError::Characteristic(0.0))?;
    let vr_i = vr.columns(0, k).into_owned();
    let vr_ii = vr.columns(k, r).into_owned();
    let bb = &vr_i * &dphi + vr_ii;
    let rhs = &a21 * &dphi + a22;
    bb.lu().solve(&rhs).ok_or_else(|| ProfileError::LevelSet(w.iter().copied().collect()))
}

pub struct EndpointLinearization {
    pub m_minus: RMat,
    pub m_plus: RMat,
    pub spec_minus: Vec<Complex64>,
    pub spec_plus: Vec<Complex64>,
}

pub fn endpoint_linearization(
    system: &SystemDefinition,
    triple: &ShockTriple,
) -> Result<EndpointLinearization, ProfileError> {
    let chart = system.chart.as_ref().ok_or(ProfileError::NoChart)?;
    let wm = (chart.to_chart)(&triple.minus());
    let wp = (chart.to_chart)(&triple.plus());
    let m_minus = profile_linearization(system, chart, &wm, triple.s)?;
    let m_plus = profile_linearization(system, chart, &wp, triple.s)?;
    let spec_minus: Vec<Complex64> = eigenvalues(&complexify(&m_minus)).iter().copied().collect();
    let spec_plus: Vec<Complex64> = eigenvalues(&complexify(&m_plus)).iter().copied().collect();
    let scale = m_minus.norm().max(m_plus.norm()).max(1.0);
    for z in spec_minus.iter().chain(spec_plus.iter()) {
        if z.re.abs() <= 1e-8 * scale {
            return Err(ProfileError::DegenerateRestPoint(z.re));
        }
    }
    Ok(EndpointLinearization { m_minus, m_plus, spec_minus, spec_plus })
}

pub fn classify_shock(
    system: &SystemDefinition,
    triple: &ShockTriple,
) -> Result<ShockClassification, ProfileError> {
    let (n, r) = (system.n, system.r);
    let am = system.flux_jacobian(&triple.minus(), 0);
    let ap = system.flux_jacobian(&triple.plus(), 0);
    let scale = am.norm().max(ap.norm()).max(1.0);
    let shifted = |m: &RMat| -> Result<(usize, usize), ProfileError> {
        let mut below = 0;
        let mut above = 0;
        for z in eigenvalues(&complexify(m)).iter() {
            let rel = z.re - triple.s;
            if rel.abs() <= 1e-8 * scale {
                return Err(ProfileError::Characteristic(z.re));
            }
            if rel < 0.0 {
                below += 1;
            } else {
                above += 1;
            }
        }
        Ok((below, above))
    };
    let (i_plus, _) = shifted(&ap)?;
    let (_, i_minus) = shifted(&am)?;
    let lin = endpoint_linearization(system, triple)?;
    let d_minus = lin.spec_minus.iter().filter(|z| z.re > 0.0).count();
    let d_plus = lin.spec_plus.iter().filter(|z| z.re < 0.0).count();
    let ell_hat = (d_plus + d_minus) as i64 - r as i64;
    let ell_char = (i_plus + i_minus) as i64 - n as i64;
    if ell_hat != ell_char {
        return Err(ProfileError::IndexMismatch(ell_hat, ell_char));
    }
    let lax = i_plus + i_minus == n + 1;
    Ok(ShockClassification {
        p: if lax { Some(i_plus) } else { None },
        i_plus,
        i_minus,
        d_plus,
        d_minus,
        ell_hat,
        lax,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DecayCert {
    pub theta_fit_minus: f64,
    pub theta_fit_plus: f64,
    pub theta_pred_minus: f64,
    pub theta_pred_plus: f64,
}

impl DecayCert {
    pub fn within(&self, rel: f64) -> bool {
        (self.theta_fit_minus - self.theta_pred_minus).abs() <= rel * self.theta_pred_minus
            && (self.theta_fit_plus - self.theta_pred_plus).abs() <= rel * self.theta_pred_plus
    }
}

pub struct ShockProfile {
    pub triple: ShockTriple,
    pub classification: Option<ShockClassification>,
    /// Uniform nodes on [-L, L].
    pub grid: Vec<f64>,
    /// Conservative states at nodes.
    pub values: Vec<RVec>,
    /// Exact ODE derivatives U' at nodes.
    pub derivs: Vec<RVec>,
    pub theta_decay: f64,
    pub decay: DecayCert,
    pub m_minus: RMat,
    pub m_plus: RMat,
    pub max_ode_residual: f64,
    pub conservation_defect: f64,
}

impl ShockProfile {
    pub fn half_length(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Cubic Hermite evaluation of (U, U') at any x; clamps to the
    /// endpoint states outside the grid.
    pub fn eval(&self, x: f64) -> (RVec, RVec) {
        let n = self.grid.len() - 1;
        if x <= self.grid[0] {
            return (self.values[0].clone(), RVec::zeros(self.values[0].len()));
        }
        if x >= self.grid[n] {
            return (self.values[n].clone(), RVec::zeros(self.values[0].len()));
        }
        let h = self.grid[1] - self.grid[0];
        let i = (((x - self.grid[0]) / h).floor() as usize).min(n - 1);
        let t = (x - self.grid[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let u = &self.values[i] * h00
            + &self.derivs[i] * (h10 * h)
            + &self.values[i + 1] * h01
            + &self.derivs[i + 1] * (h11 * h);
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        let du = &self.values[i] * d00
            + &self.derivs[i] * d10
            + &self.values[i + 1] * d01
            + &self.derivs[i + 1] * d11;
        (u, du)
    }

    /// Wraps a closed-form profile (values and derivatives) with the same
    /// certification data the solver computes.
    pub fn from_exact(
        system: &SystemDefinition,
        triple: ShockTriple,
        half_length: f64,
        nodes: usize,
        f: impl Fn(f64) -> (RVec, RVec),
    ) -> Result<ShockProfile, ProfileError> {
        let chart = system.chart.as_ref().ok_or(ProfileError::NoChart)?;
        let n_nodes = nodes | 1 ^ 1; // force even interval count
        let n_int = n_nodes.max(64);
        let h = 2.0 * half_length / n_int as f64;
        let grid: Vec<f64> = (0..=n_int).map(|i| -half_length + i as f64 * h).collect();
        let mut values = Vec::with_capacity(grid.len());
        let mut derivs = Vec::with_capacity(grid.len());
        for &x in &grid {
            let (u, du) = f(x);
            values.push(u);
            derivs.push(du);
        }
        let wm = (chart.to_chart)(&triple.minus());
        let wp = (chart.to_chart)(&triple.plus());
        let m_minus = profile_linearization(system, chart, &wm, triple.s)?;
        let m_plus = profile_linearization(system, chart, &wp, triple.s)?;
        let mut profile = ShockProfile {
            triple,
            classification: None,
            grid,
            values,
            derivs,
            theta_decay: 0.0,
            decay: DecayCert {
                theta_fit_minus: 0.0,
                theta_fit_plus: 0.0,
                theta_pred_minus: 0.0,
                theta_pred_plus: 0.0,
            },
            m_minus,
            m_plus,
            max_ode_residual: 0.0,
            conservation_defect: 0.0,
        };
        certify(system, &mut profile);
        Ok(profile)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub half_length: Option<f64>,
    pub nodes: Option<usize>,
    pub tol: f64,
    pub phase_x0: f64,
    pub max_refinements: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { half_length: None, nodes: None, tol: 1e-8, phase_x0: 0.0, max_refinements: 3 }
    }
}

/// Solves the level-set constraint (F^1 - sU)_I = q_I for w_I at fixed
/// w_II: chart closed form seeded, Newton refined to 1e-12.
fn solve_level(
    system: &SystemDefinition,
    chart: &ProfileChart,
    w_ii: &RVec,
    q_i: &RVec,
    s: f64,
) -> Result<RVec, ProfileError> {
    let (n, r) = (system.n, system.r);
    let k = n - r;
    if k == 0 {
        return Ok(RVec::zeros(0));
    }
    let mut w_i = (chart.solve_level)(w_ii, q_i, s)
        .ok_or_else(|| ProfileError::LevelSet(w_ii.iter().copied().collect()))?;
    let assemble = |w_i: &RVec| -> RVec {
        let mut w = RVec::zeros(n);
        for i in 0..k {
            w[i] = w_i[i];
        }
        for i in 0..r {
            w[k + i] = w_ii[i];
        }
        w
    };
    for _ in 0..25 {
        let w = assemble(&w_i);
        let u = (chart.from_chart)(&w);
        let g_i = system.flux(&u, 0).rows(0, k).into_owned() - u.rows(0, k) * s;
        let res = &g_i - q_i;
        if res.norm() <= 1e-12 * (1.0 + q_i.norm()) {
            return Ok(w_i);
        }
        let alpha = alpha_matrix(system, chart, &w, s);
        let a11 = alpha.view((0, 0), (k, k)).into_owned();
        let step = a11
            .lu()
            .solve(&res)
            .ok_or_else(|| ProfileError::LevelSet(w_ii.iter().copied().collect()))?;
        w_i -= step;
    }
    Err(ProfileError::LevelSet(w_ii.iter().copied().collect()))
}

/// Full chart state from the II-block via the level set.
fn lift(
    system: &SystemDefinition,
    chart: &ProfileChart,
    w_ii: &RVec,
    q_i: &RVec,
    s: f64,
) -> Result<RVec, ProfileError> {
    let (n, r) = (system.n, system.r);
    let k = n - r;
    let w_i = solve_level(system, chart, w_ii, q_i, s)?;
    let mut w = RVec::zeros(n);
    for i in 0..k {
        w[i] = w_i[i];
    }
    for i in 0..r {
        w[k + i] = w_ii[i];
    }
    Ok(w)
}

/// Reduced ODE right side in the chart: bb(w) w_II' = G_II(w) - q_II,
/// returning (bb, rhs).
fn reduced_ode(
    system: &SystemDefinition,
    chart: &ProfileChart,
    w: &RVec,
    q_ii: &RVec,
    s: f64,
) -> Result<(RMat, RVec), ProfileError> {
    let (n, r) = (system.n, system.r);
    let k = n - r;
    let u = (chart.from_chart)(w);
    let g_ii = system.flux(&u, 0).rows(k, r).into_owned() - u.rows(k, r) * s;
    let rhs = g_ii - q_ii;
    let vr = (chart.viscous_rows)(w);
    let bb = if k == 0 {
        vr
    } else {
        let alpha = alpha_matrix(system, chart, w, s);
        let a11 = alpha.view((0, 0), (k, k)).into_owned();
        let a12 = alpha.view((0, k), (k, r)).into_owned();
        let dphi = -a11
            .lu()
            .solve(&a12)
            .ok_or_else(|| ProfileError::Characteristic(0.0))?;
        vr.columns(0, k) * dphi + vr.columns(k, r)
    };
    Ok((bb, rhs))
}

pub fn solve_profile(
    system: &SystemDefinition,
    triple: &ShockTriple,
    opts: &SolveOptions,
) -> Result<ShockProfile, ProfileError> {
    let chart = system.chart.as_ref().ok_or(ProfileError::NoChart)?;
    let classification = classify_shock(system, triple)?;
    if !classification.lax || classification.ell_hat != 1 {
        return Err(ProfileError::NotLax(classification.ell_hat));
    }
    let lin = endpoint_linearization(system, triple)?;
    let (n, r) = (system.n, system.r);
    let k = n - r;
    let s = triple.s;
    let wm = (chart.to_chart)(&triple.minus());
    let wp = (chart.to_chart)(&triple.plus());
    let wm_ii = wm.rows(k, r).into_owned();
    let wp_ii = wp.rows(k, r).into_owned();
    let u_minus = triple.minus();
    let q = system.flux(&u_minus, 0) - &u_minus * s;
    let q_i = q.rows(0, k).into_owned();
    let q_ii = q.rows(k, r).into_owned();

    // Decay-rate estimates drive the domain size and grid density.
    let theta_minus =
        lin.spec_minus.iter().filter(|z| z.re > 0.0).map(|z| z.re).fold(f64::INFINITY, f64::min);
    let theta_plus =
        lin.spec_plus.iter().filter(|z| z.re < 0.0).map(|z| -z.re).fold(f64::INFINITY, f64::min);
    let theta_min = theta_minus.min(theta_plus);
    let theta_max = lin
        .spec_minus
        .iter()
        .chain(lin.spec_plus.iter())
        .map(|z| z.re.abs())
        .fold(0.0, f64::max);
    let l = opts.half_length.unwrap_or(12.0 / theta_min);

    let mut n_int = opts.nodes.unwrap_or_else(|| {
        let h_acc = (24.0 * opts.tol / theta_min.powi(3)).sqrt() * 0.5;
        let h_res = 0.2 / theta_max;
        let h = h_acc.min(h_res);
        ((2.0 * l / h).ceil() as usize).clamp(200, 400_000)
    });
    n_int += n_int % 2;

    // Boundary rows annihilate components off the connecting manifolds:
    // stable(M-^T) spans unstable(M-)^perp, and so on.
    let rows_minus = real_invariant_basis(&lin.m_minus.transpose(), |z| z.re < 0.0);
    let rows_plus = real_invariant_basis(&lin.m_plus.transpose(), |z| z.re > 0.0);
    assert_eq!(rows_minus.ncols(), r - classification.d_minus);
    assert_eq!(rows_plus.ncols(), r - classification.d_plus);
    let jump_ii = &wp_ii - &wm_ii;
    let mut phase_comp = 0;
    for i in 0..r {
        if jump_ii[i].abs() > jump_ii[phase_comp].abs() {
            phase_comp = i;
        }
    }
    let phase_target = 0.5 * (wm_ii[phase_comp] + wp_ii[phase_comp]);

    let mut x_cur: Option<Vec<RVec>> = None;
    let mut last_err = ProfileError::NoConvergence(f64::NAN);
    for refinement in 0..=opts.max_refinements {
        let n_nodes = n_int + 1;
        let h = 2.0 * l / n_int as f64;
        // Shift the grid so the phase point is exactly a node.
        let phase_node = (((opts.phase_x0 + l) / h).round() as usize).clamp(1, n_int - 1);
        let offset = (-l + phase_node as f64 * h) - opts.phase_x0;
        let grid: Vec<f64> = (0..=n_int).map(|i| -l + i as f64 * h - offset).collect();

        // Initial guess: tanh ramp between endpoints, or interpolation of
        // the previous refinement level.
        let mut x: Vec<RVec> = match &x_cur {
            Some(prev) => {
                let np = prev.len() - 1;
                (0..=n_int)
                    .map(|i| {
                        let t = i as f64 * np as f64 / n_int as f64;
                        let j = (t.floor() as usize).min(np - 1);
                        let fr = t - j as f64;
                        &prev[j] * (1.0 - fr) + &prev[j + 1] * fr
                    })
                    .collect()
            }
            None => grid
                .iter()
                .map(|&xg| {
                    let ramp = (theta_min * xg / 2.0).tanh();
                    (&wm_ii + &wp_ii) * 0.5 + &jump_ii * (ramp / 2.0)
                })
                .collect(),
        };

        match newton_collocation(
            system, chart, &mut x, &grid, h, &q_i, &q_ii, s, &rows_minus, &rows_plus, &wm_ii,
            &wp_ii, phase_node, phase_comp, phase_target,
        ) {
            Ok(()) => {}
            Err(e) => {
                last_err = e;
                n_int *= 2;
                continue;
            }
        }

        // Assemble the full profile and certify.
        let mut values = Vec::with_capacity(n_nodes);
        let mut derivs = Vec::with_capacity(n_nodes);
        for w_ii in x.iter() {
            let w = lift(system, chart, w_ii, &q_i, s)?;
            let (bb, rhs) = reduced_ode(system, chart, &w, &q_ii, s)?;
            let wii_prime = bb
                .lu()
                .solve(&rhs)
                .ok_or_else(|| ProfileError::NoConvergence(f64::NAN))?;
            let w_prime = if k == 0 {
                wii_prime.clone()
            } else {
                let alpha = alpha_matrix(system, chart, &w, s);
                let a11 = alpha.view((0, 0), (k, k)).into_owned();
                let a12 = alpha.view((0, k), (k, r)).into_owned();
                let wi_prime = -a11
                    .lu()
                    .solve(&(&a12 * &wii_prime))
                    .ok_or_else(|| ProfileError::Characteristic(0.0))?;
                let mut wp_full = RVec::zeros(n);
                for i in 0..k {
                    wp_full[i] = wi_prime[i];
                }
                for i in 0..r {
                    wp_full[k + i] = wii_prime[i];
                }
                wp_full
            };
            let jac = (chart.jacobian)(&w);
            values.push((chart.from_chart)(&w));
            derivs.push(&jac * &w_prime);
        }
        let mut profile = ShockProfile {
            triple: triple.clone(),
            classification: Some(classification.clone()),
            grid,
            values,
            derivs,
            theta_decay: 0.0,
            decay: DecayCert {
                theta_fit_minus: 0.0,
                theta_fit_plus: 0.0,
                theta_pred_minus: theta_minus,
                theta_pred_plus: theta_plus,
            },
            m_minus: lin.m_minus.clone(),
            m_plus: lin.m_plus.clone(),
            max_ode_residual: 0.0,
            conservation_defect: 0.0,
        };
        certify(system, &mut profile);
        profile.decay.theta_pred_minus = theta_minus;
        profile.decay.theta_pred_plus = theta_plus;
        if profile.max_ode_residual <= opts.tol && profile.conservation_defect <= opts.tol {
            return Ok(profile);
        }
        last_err = ProfileError::Certification(format!(
            "residual {} / conservation {} above {} at {} intervals",
            profile.max_ode_residual, profile.conservation_defect, opts.tol, n_int
        ));
        if refinement == opts.max_refinements {
            return Err(last_err);
        }
        x_cur = Some(x);
        n_int *= 2;
    }
    Err(last_err)
}

/// Damped Newton on the midpoint collocation system with banded LU.
#[allow(clippy::too_many_arguments)]
fn newton_collocation(
    system: &SystemDefinition,
    chart: &ProfileChart,
    x: &mut [RVec],
    grid: &[f64],
    h: f64,
    q_i: &RVec,
    q_ii: &RVec,
    s: f64,
    rows_minus: &RMat,
    rows_plus: &RMat,
    wm_ii: &RVec,
    wp_ii: &RVec,
    phase_node: usize,
    phase_comp: usize,
    phase_target: f64,
) -> Result<(), ProfileError> {
    let r = q_ii.len();
    let n_int = grid.len() - 1;
    let n_unknowns = r * (n_int + 1);
    let n_bc_l = rows_minus.ncols();
    let n_bc_r = rows_plus.ncols();
    assert_eq!(n_bc_l + n_bc_r + 1 + r * n_int, n_unknowns, "collocation system not square");

    let interval_eq = |wl: &RVec, wr: &RVec| -> Result<RVec, ProfileError> {
        let wm = (wl + wr) * 0.5;
        let w = lift(system, chart, &wm, q_i, s)?;
        let (bb, rhs) = reduced_ode(system, chart, &w, q_ii, s)?;
        Ok(bb * ((wr - wl) / h) - rhs)
    };

    // Row layout: left BC rows, interval blocks in order with the phase row
    // spliced in before the block of `phase_node`, right BC rows.
    let row_of_interval = |i: usize| -> usize {
        n_bc_l + r * i + if i >= phase_node { 1 } else { 0 }
    };
    let phase_row = n_bc_l + r * phase_node;
    let right_bc_row = n_unknowns - n_bc_r;

    let assemble_residual = |x: &[RVec]| -> Result<RVec, ProfileError> {
        let mut f = RVec::zeros(n_unknowns);
        for c in 0..n_bc_l {
            let mut v = 0.0;
            for i in 0..r {
                v += rows_minus[(i, c)] * (x[0][i] - wm_ii[i]);
            }
            f[c] = v;
        }
        for i in 0..n_int {
            let g = interval_eq(&x[i], &x[i + 1])?;
            let base = row_of_interval(i);
            for a in 0..r {
                f[base + a] = g[a];
            }
        }
        f[phase_row] = x[phase_node][phase_comp] - phase_target;
        for c in 0..n_bc_r {
            let mut v = 0.0;
            for i in 0..r {
                v += rows_plus[(i, c)] * (x[n_int][i] - wp_ii[i]);
            }
            f[right_bc_row + c] = v;
        }
        Ok(f)
    };

    let scale = 1.0 + q_ii.norm() + wm_ii.norm() + wp_ii.norm();
    let mut f = assemble_residual(x)?;
    for _iter in 0..40 {
        let fnorm = f.amax();
        if fnorm <= 1e-11 * scale {
            return Ok(());
        }
        let band = 2 * r + 2;
        let mut jac = BandMatrix::new(n_unknowns, band, band);
        for c in 0..n_bc_l {
            for i in 0..r {
                jac.add(c, i, rows_minus[(i, c)]);
            }
        }
        for i in 0..n_int {
            let base = row_of_interval(i);
            for side in 0..2 {
                let node = i + side;
                for comp in 0..r {
                    let step = 1e-6 * (1.0 + x[node][comp].abs());
                    let mut xl = x[i].clone();
                    let mut xr = x[i + 1].clone();
                    let (mut xl2, mut xr2) = (xl.clone(), xr.clone());
                    if side == 0 {
                        xl[comp] += step;
                        xl2[comp] -= step;
                    } else {
                        xr[comp] += step;
                        xr2[comp] -= step;
                    }
                    let gp = interval_eq(&xl, &xr)?;
                    let gm = interval_eq(&xl2, &xr2)?;
                    let col = r * node + comp;
                    for a in 0..r {
                        jac.add(base + a, col, (gp[a] - gm[a]) / (2.0 * step));
                    }
                }
            }
        }
        jac.add(phase_row, r * phase_node + phase_comp, 1.0);
        for c in 0..n_bc_r {
            for i in 0..r {
                jac.add(right_bc_row + c, r * n_int + i, rows_plus[(i, c)]);
            }
        }
        if !jac.factor() {
            return Err(ProfileError::NoConvergence(fnorm));
        }
        let delta = jac.solve(&f);
        // Damped update.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let trial: Vec<RVec> = (0..x.len())
                .map(|node| {
                    let mut w = x[node].clone();
                    for comp in 0..r {
                        w[comp] -= lambda * delta[r * node + comp];
                    }
                    w
                })
                .collect();
            match assemble_residual(&trial) {
                Ok(ft) if ft.amax() < fnorm * (1.0 - 1e-4 * lambda) || ft.amax() <= 1e-11 * scale =>
                {
                    x.iter_mut().zip(trial).for_each(|(dst, src)| *dst = src);
                    f = ft;
                    accepted = true;
                    break;
                }
                _ => lambda *= 0.5,
            }
        }
        if !accepted {
            return Err(ProfileError::NoConvergence(fnorm));
        }
    }
    let fnorm = f.amax();
    if fnorm <= 1e-11 * scale {
        Ok(())
    } else {
        Err(ProfileError::NoConvergence(fnorm))
    }
}

/// Fills residual, conservation, and decay certificates in place.
fn certify(system: &SystemDefinition, profile: &mut ShockProfile) {
    let (n, r) = (system.n, system.r);
    let k = n - r;
    let s = profile.triple.s;
    let u_minus = profile.triple.minus();
    let q = system.flux(&u_minus, 0) - &u_minus * s;
    let n_nodes = profile.grid.len();
    let h = profile.grid[1] - profile.grid[0];

    // ODE residual of the first-integrated equation with fourth-order
    // central derivatives, independent of the collocation scheme.
    let mut max_res: f64 = 0.0;
    let mut max_cons: f64 = 0.0;
    for i in 0..n_nodes {
        let u = &profile.values[i];
        let g = system.flux(u, 0) - u * s;
        for c in 0..k {
            max_cons = max_cons.max((g[c] - q[c]).abs());
        }
        if i >= 2 && i + 2 < n_nodes {
            let du = (&profile.values[i - 2] - &profile.values[i + 2]
                + (&profile.values[i + 1] - &profile.values[i - 1]) * 8.0)
                / (12.0 * h);
            let z = (system.viscosity(u, 0, 0) * du).rows(k, r).into_owned();
            for c in 0..r {
                let res = z[c] - (g[k + c] - q[k + c]);
                max_res = max_res.max(res.abs());
            }
        }
    }
    profile.max_ode_residual = max_res;
    profile.conservation_defect = max_cons;

    // Tail decay fits on log-norm of the deviation from each endpoint.
    let l = profile.half_length();
    let u_plus = profile.triple.plus();
    let fit = |lo: f64, hi: f64, endpoint: &RVec| -> f64 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, &xg) in profile.grid.iter().enumerate() {
            if xg >= lo && xg <= hi {
                let dev = (&profile.values[i] - endpoint).norm();
                if dev > 1e-12 {
                    xs.push(xg);
                    ys.push(dev.ln());
                }
            }
        }
        if xs.len() < 8 {
            return f64::NAN;
        }
        linear_fit(&xs, &ys).0
    };
    let slope_plus = fit(0.3 * l, 0.75 * l, &u_plus);
    let slope_minus = fit(-0.75 * l, -0.3 * l, &u_minus);
    profile.decay.theta_fit_plus = -slope_plus;
    profile.decay.theta_fit_minus = slope_minus;
    // Predictions from the stored linearizations when not already set.
    let pred = |m: &RMat, stable: bool| -> f64 {
        eigenvalues(&complexify(m))
            .iter()
            .filter(|z| if stable { z.re < 0.0 } else { z.re > 0.0 })
            .map(|z| z.re.abs())
            .fold(f64::INFINITY, f64::min)
    };
    if profile.decay.theta_pred_plus == 0.0 {
        profile.decay.theta_pred_plus = pred(&profile.m_plus, true);
    }
    if profile.decay.theta_pred_minus == 0.0 {
        profile.decay.theta_pred_minus = pred(&profile.m_minus, false);
    }
    profile.theta_decay = profile.decay.theta_fit_minus.min(profile.decay.theta_fit_plus);
}
