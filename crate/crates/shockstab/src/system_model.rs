//! Conservation-law system definitions and the built-in model catalog.
//!
//! A system is U_t + sum_j F^j(U)_{x_j} = sum_{j,k} (B^{jk}(U) U_{x_k})_{x_j}
//! with U in R^n, d space dimensions, and viscous rank r: in the declared
//! block split U = (u_I, u_II) the top n-r rows of every B^{jk} vanish and
//! the lower-right r x r block of sum xi_j xi_k B^{jk} is elliptic.

use std::collections::BTreeMap;

use crate::linalg::{complexify, eigenvalues, RMat, RVec};

pub type BoxedMap = Box<dyn Fn(&RVec) -> RVec + Send + Sync>;
pub type BoxedMatFn = Box<dyn Fn(&RVec) -> RMat + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("inadmissible state: {0}")]
    Inadmissible(String),
    #[error("structural violation: {0}")]
    Structure(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("bad parameter: {0}")]
    Parameter(String),
}

/// Chart of "natural" variables W in which the traveling-wave problem is a
/// well-posed DAE: the inviscid constraint solves for w_I as a function of
/// w_II, and the viscous flux is a linear form in W'.
pub struct ProfileChart {
    /// W(U).
    pub to_chart: BoxedMap,
    /// U(W).
    pub from_chart: BoxedMap,
    /// dU/dW at W.
    pub jacobian: BoxedMatFn,
    /// r x n matrix b(W) with (B^{11} U')_II = b(W) W'.
    pub viscous_rows: BoxedMatFn,
    /// Solves (F^1 - sU)_I (U(w_I, w_II)) = q_I for w_I. None if the level
    /// set does not intersect the chart at this w_II.
    pub solve_level: Box<dyn Fn(&RVec, &RVec, f64) -> Option<RVec> + Send + Sync>,
}

/// Entropy symmetrizer data in the model's natural variables: the form
/// A0(W) dW/dU A^j dU/dW is symmetric for each j.
pub struct SymmetrizerHook {
    pub to_w: BoxedMap,
    pub from_w: BoxedMap,
    /// dU/dW at W.
    pub du_dw: BoxedMatFn,
    /// Symmetric positive definite A0~(W).
    pub a0: BoxedMatFn,
    /// First-order symmetry holds at W (thermodynamic stability region).
    pub first_order_symmetric: Box<dyn Fn(&RVec) -> bool + Send + Sync>,
}

pub struct SystemDefinition {
    pub name: String,
    pub n: usize,
    pub r: usize,
    pub d: usize,
    pub component_names: Vec<String>,
    flux_fn: Box<dyn Fn(&RVec, usize) -> RVec + Send + Sync>,
    flux_jac_fn: Box<dyn Fn(&RVec, usize) -> RMat + Send + Sync>,
    visc_fn: Box<dyn Fn(&RVec, usize, usize) -> RMat + Send + Sync>,
    admissible_fn: Box<dyn Fn(&RVec) -> Result<(), String> + Send + Sync>,
    pub chart: Option<ProfileChart>,
    pub symmetrizer: Option<SymmetrizerHook>,
}

impl SystemDefinition {
    pub fn admissible(&self, u: &RVec) -> Result<(), ModelError> {
        (self.admissible_fn)(u).map_err(ModelError::Inadmissible)
    }

    pub fn flux(&self, u: &RVec, j: usize) -> RVec {
        assert!(j < self.d);
        (self.flux_fn)(u, j)
    }

    pub fn flux_jacobian(&self, u: &RVec, j: usize) -> RMat {
        assert!(j < self.d);
        (self.flux_jac_fn)(u, j)
    }

    pub fn viscosity(&self, u: &RVec, j: usize, k: usize) -> RMat {
        assert!(j < self.d && k < self.d);
        (self.visc_fn)(u, j, k)
    }

    /// Directional derivative dB^{jk}(U)[v], by Richardson-extrapolated
    /// central differences on the analytic B. Entries of B are smooth
    /// rational functions, so the extrapolated error is ~1e-12 relative.
    pub fn viscosity_derivative(&self, u: &RVec, j: usize, k: usize, v: &RVec) -> RMat {
        let vn = v.norm();
        if vn == 0.0 {
            return RMat::zeros(self.n, self.n);
        }
        let h = 1e-4 * (1.0 + u.norm()) / vn;
        let diff = |step: f64| -> RMat {
            let up = u + v * step;
            let um = u - v * step;
            ((self.visc_fn)(&up, j, k) - (self.visc_fn)(&um, j, k)) / (2.0 * step)
        };
        let d1 = diff(h);
        let d2 = diff(h / 2.0);
        (d2 * 4.0 - d1) / 3.0
    }

    /// sum_{j,k} xi_j xi_k B^{jk}(U).
    pub fn viscosity_tensor(&self, u: &RVec, xi: &RVec) -> RMat {
        assert_eq!(xi.len(), self.d);
        let mut b = RMat::zeros(self.n, self.n);
        for j in 0..self.d {
            for k in 0..self.d {
                if xi[j] != 0.0 && xi[k] != 0.0 {
                    b += (self.visc_fn)(u, j, k) * (xi[j] * xi[k]);
                }
            }
        }
        b
    }

    /// sum_j xi_j A^j(U).
    pub fn flux_symbol(&self, u: &RVec, xi: &RVec) -> RMat {
        assert_eq!(xi.len(), self.d);
        let mut a = RMat::zeros(self.n, self.n);
        for j in 0..self.d {
            if xi[j] != 0.0 {
                a += (self.flux_jac_fn)(u, j) * xi[j];
            }
        }
        a
    }

    /// Verifies the zero first block row of every B^{jk} at U.
    pub fn block_structure_ok(&self, u: &RVec) -> Result<(), ModelError> {
        for j in 0..self.d {
            for k in 0..self.d {
                let b = (self.visc_fn)(u, j, k);
                for row in 0..(self.n - self.r) {
                    for col in 0..self.n {
                        if b[(row, col)] != 0.0 {
                            return Err(ModelError::Structure(format!(
                                "B^{{{j}{k}}} has nonzero entry ({row},{col}) in the first block row"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Smallest over sampled unit xi of min Re sigma(b_II(xi)), the
    /// ellipticity margin theta of the lower viscosity block.
    pub fn lower_block_ellipticity(&self, u: &RVec, dirs: usize) -> f64 {
        let mut theta = f64::INFINITY;
        for xi in sphere_directions(self.d, dirs) {
            let b = self.viscosity_tensor(u, &xi);
            let bii = b.view((self.n - self.r, self.n - self.r), (self.r, self.r)).into_owned();
            let min_re =
                eigenvalues(&complexify(&bii)).iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            theta = theta.min(min_re);
        }
        theta
    }
}

pub fn flux_and_jacobian(
    system: &SystemDefinition,
    u: &RVec,
    j: usize,
) -> Result<(RVec, RMat), ModelError> {
    system.admissible(u)?;
    Ok((system.flux(u, j), system.flux_jacobian(u, j)))
}

/// First-order coefficient of the linearization about a sloped state:
/// dF^j(U) - dB^{j1}(U)[.] U'. The second term appears because the frozen
/// background has nonzero slope, so varying the state also varies the viscous
/// flux B^{j1} U_{x_1} at first order.
pub fn linearized_flux_coefficient(
    system: &SystemDefinition,
    u: &RVec,
    up: &RVec,
    j: usize,
) -> RMat {
    let n = system.n;
    let mut a = system.flux_jacobian(u, j);
    if up.norm() > 0.0 {
        for b in 0..n {
            let mut e = RVec::zeros(n);
            e[b] = 1.0;
            let col = system.viscosity_derivative(u, j, 0, &e) * up;
            for row in 0..n {
                a[(row, b)] -= col[row];
            }
        }
    }
    a
}

/// Central finite-difference Jacobian of the flux, used as a cross-check
/// against the analytic one.
pub fn fd_flux_jacobian(system: &SystemDefinition, u: &RVec, j: usize, h: f64) -> RMat {
    let n = system.n;
    let mut a = RMat::zeros(n, n);
    for col in 0..n {
        let mut up = u.clone();
        let mut um = u.clone();
        let step = h * (1.0 + u[col].abs());
        up[col] += step;
        um[col] -= step;
        let d = (system.flux(&up, j) - system.flux(&um, j)) / (2.0 * step);
        a.set_column(col, &d);
    }
    a
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HyperbolicityReport {
    pub real_semisimple: bool,
    pub constant_multiplicity: bool,
    /// Sorted multiplicity pattern common to all sampled directions (empty
    /// when the pattern varies).
    pub multiplicity_pattern: Vec<usize>,
    pub max_imag: f64,
    pub max_eigvec_cond: f64,
}

/// Samples eigenvalues of the first-order symbol over unit directions and
/// reports realness, semisimplicity, and multiplicity constancy.
pub fn hyperbolicity_report(
    system: &SystemDefinition,
    u: &RVec,
    sphere_samples: usize,
) -> Result<HyperbolicityReport, ModelError> {
    system.admissible(u)?;
    let mut real = true;
    let mut max_imag: f64 = 0.0;
    let mut max_cond: f64 = 0.0;
    let mut semisimple = true;
    let mut pattern: Option<Vec<usize>> = None;
    let mut constant = true;
    for xi in sphere_directions(system.d, sphere_samples.max(16)) {
        let a = system.flux_symbol(u, &xi);
        let ca = complexify(&a);
        let scale = a.norm().max(1.0);
        let (vals, vecs) = crate::linalg::eigen(&ca);
        for z in vals.iter() {
            max_imag = max_imag.max(z.im.abs());
            if z.im.abs() > 1e-10 * scale {
                real = false;
            }
        }
        let cond = crate::linalg::cond2(&vecs);
        max_cond = max_cond.max(cond);
        if !(cond < 1e8) {
            semisimple = false;
        }
        let mults = multiplicities(&vals.iter().map(|z| z.re).collect::<Vec<_>>(), 1e-6 * scale);
        match &pattern {
            None => pattern = Some(mults),
            Some(p) => {
                if *p != mults {
                    constant = false;
                }
            }
        }
    }
    Ok(HyperbolicityReport {
        real_semisimple: real && semisimple,
        constant_multiplicity: constant,
        multiplicity_pattern: if constant { pattern.unwrap_or_default() } else { vec![] },
        max_imag,
        max_eigvec_cond: max_cond,
    })
}

fn multiplicities(vals: &[f64], tol: f64) -> Vec<usize> {
    let mut sorted = vals.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && (sorted[j] - sorted[j - 1]).abs() <= tol {
            j += 1;
        }
        out.push(j - i);
        i = j;
    }
    out.sort_unstable();
    out
}

/// Deterministic unit directions: signed axes first, then a seeded fill of
/// the sphere. d = 1 always yields exactly {+1, -1}.
pub fn sphere_directions(d: usize, count: usize) -> Vec<RVec> {
    if d == 1 {
        return vec![RVec::from_element(1, 1.0), RVec::from_element(1, -1.0)];
    }
    let mut dirs = Vec::with_capacity(count.max(2 * d));
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = RVec::zeros(d);
            e[j] = sign;
            dirs.push(e);
        }
    }
    if d == 2 {
        let extra = count.saturating_sub(dirs.len());
        for m in 0..extra {
            let th = std::f64::consts::PI * (2.0 * m as f64 + 1.0) / (extra.max(1) as f64);
            dirs.push(RVec::from_vec(vec![th.cos(), th.sin()]));
        }
    } else {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED);
        while dirs.len() < count {
            let v = RVec::from_fn(d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let nrm = v.norm();
            if nrm > 1e-3 {
                dirs.push(v / nrm);
            }
        }
    }
    dirs
}

// ---------------------------------------------------------------------------
// Catalog models
// ---------------------------------------------------------------------------

/// Ideal-gas parameters. Energy density E = rho e + rho |u|^2 / 2 with
/// e = c_v T, pressure p = rho R T, c_v = R / (gamma - 1).
#[derive(Debug, Clone, Copy)]
pub struct GasParams {
    pub gamma: f64,
    pub r_gas: f64,
    pub mu: f64,
    pub lambda: f64,
    pub kappa: f64,
}

impl GasParams {
    /// Reference scaling: R = 1, gamma = 1.4, mu = 0.1, Stokes relation
    /// lambda = -2mu/3, Prandtl number 0.75.
    pub fn reference() -> Self {
        let gamma = 1.4;
        let mu = 0.1;
        let cp = gamma / (gamma - 1.0);
        GasParams { gamma, r_gas: 1.0, mu, lambda: -2.0 * mu / 3.0, kappa: mu * cp / 0.75 }
    }

    pub fn c_v(&self) -> f64 {
        self.r_gas / (self.gamma - 1.0)
    }
}

/// Scalar model with quadratic flux u^2/2 in every direction and identity
/// viscosity; n = r = 1 in any space dimension.
pub fn burgers(d: usize) -> SystemDefinition {
    assert!(d >= 1);
    SystemDefinition {
        name: "burgers".into(),
        n: 1,
        r: 1,
        d,
        component_names: vec!["u".into()],
        flux_fn: Box::new(|u, _| RVec::from_element(1, u[0] * u[0] / 2.0)),
        flux_jac_fn: Box::new(|u, _| RMat::from_element(1, 1, u[0])),
        visc_fn: Box::new(|_, j, k| RMat::from_element(1, 1, if j == k { 1.0 } else { 0.0 })),
        admissible_fn: Box::new(|_| Ok(())),
        chart: Some(ProfileChart {
            to_chart: Box::new(|u| u.clone()),
            from_chart: Box::new(|w| w.clone()),
            jacobian: Box::new(|_| RMat::identity(1, 1)),
            viscous_rows: Box::new(|_| RMat::identity(1, 1)),
            solve_level: Box::new(|_, _, _| Some(RVec::zeros(0))),
        }),
        symmetrizer: Some(SymmetrizerHook {
            to_w: Box::new(|u| u.clone()),
            from_w: Box::new(|w| w.clone()),
            du_dw: Box::new(|_| RMat::identity(1, 1)),
            a0: Box::new(|_| RMat::identity(1, 1)),
            first_order_symmetric: Box::new(|_| true),
        }),
    }
}

/// Isentropic gas dynamics in Eulerian coordinates, U = (rho, m):
/// rho_t + m_x = 0, m_t + (m^2/rho + a rho^gamma)_x = (mu u_x)_x.
pub fn isentropic_ns(gamma: f64, a: f64, mu: f64) -> SystemDefinition {
    assert!(gamma > 1.0 && a > 0.0 && mu > 0.0);
    let admissible = move |u: &RVec| -> Result<(), String> {
        if u[0] <= 1e-12 {
            return Err(format!("density {} <= 0", u[0]));
        }
        Ok(())
    };
    SystemDefinition {
        name: "isentropic_ns".into(),
        n: 2,
        r: 1,
        d: 1,
        component_names: vec!["rho".into(), "m".into()],
        flux_fn: Box::new(move |u, _| {
            let (rho, m) = (u[0], u[1]);
            RVec::from_vec(vec![m, m * m / rho + a * rho.powf(gamma)])
        }),
        flux_jac_fn: Box::new(move |u, _| {
            let (rho, m) = (u[0], u[1]);
            let vel = m / rho;
            let c2 = a * gamma * rho.powf(gamma - 1.0);
            RMat::from_row_slice(2, 2, &[0.0, 1.0, -vel * vel + c2, 2.0 * vel])
        }),
        visc_fn: Box::new(move |u, _, _| {
            let (rho, m) = (u[0], u[1]);
            RMat::from_row_slice(2, 2, &[0.0, 0.0, -mu * m / (rho * rho), mu / rho])
        }),
        admissible_fn: Box::new(admissible),
        chart: Some(ProfileChart {
            // W = (rho, u); w_I = rho, w_II = u.
            to_chart: Box::new(|u| RVec::from_vec(vec![u[0], u[1] / u[0]])),
            from_chart: Box::new(|w| RVec::from_vec(vec![w[0], w[0] * w[1]])),
            jacobian: Box::new(|w| RMat::from_row_slice(2, 2, &[1.0, 0.0, w[1], w[0]])),
            // (B^{11} U')_II = mu u' exactly in the chart.
            viscous_rows: Box::new(move |_| RMat::from_row_slice(1, 2, &[0.0, mu])),
            // rho (u - s) = q.
            solve_level: Box::new(|w_ii, q, s| {
                let rel = w_ii[0] - s;
                if rel.abs() < 1e-13 || q[0] / rel <= 0.0 {
                    None
                } else {
                    Some(RVec::from_element(1, q[0] / rel))
                }
            }),
        }),
        symmetrizer: Some(SymmetrizerHook {
            to_w: Box::new(|u| RVec::from_vec(vec![u[0], u[1] / u[0]])),
            from_w: Box::new(|w| RVec::from_vec(vec![w[0], w[0] * w[1]])),
            du_dw: Box::new(|w| RMat::from_row_slice(2, 2, &[1.0, 0.0, w[1], w[0]])),
            a0: Box::new(move |w| {
                let rho = w[0];
                let pp = a * gamma * rho.powf(gamma - 1.0);
                RMat::from_diagonal(&RVec::from_vec(vec![pp / rho, rho]))
            }),
            first_order_symmetric: Box::new(|_| true),
        }),
    }
}

/// Full Navier-Stokes for an ideal gas in d dimensions.
/// U = (rho, m_1..m_d, E), n = d + 2, r = d + 1.
pub fn navier_stokes(d: usize, g: GasParams) -> SystemDefinition {
    assert!(d >= 1);
    let n = d + 2;
    let names = std::iter::once("rho".to_string())
        .chain((1..=d).map(|i| format!("m{i}")))
        .chain(std::iter::once("E".to_string()))
        .collect();

    let prim = move |u: &RVec| -> (f64, Vec<f64>, f64, f64) {
        let rho = u[0];
        let vel: Vec<f64> = (0..d).map(|i| u[1 + i] / rho).collect();
        let q: f64 = vel.iter().map(|v| v * v).sum::<f64>() / 2.0;
        let e_int = u[d + 1] / rho - q;
        (rho, vel, q, e_int)
    };

    let admissible = move |u: &RVec| -> Result<(), String> {
        if u[0] <= 1e-12 {
            return Err(format!("density {} <= 0", u[0]));
        }
        let (_, _, _, e_int) = prim(u);
        if e_int <= 0.0 {
            return Err(format!("internal energy {e_int} <= 0"));
        }
        Ok(())
    };

    // Gradient rows of primitive quantities with respect to U.
    let grad_vel = move |u: &RVec, l: usize| -> RVec {
        let rho = u[0];
        let mut g = RVec::zeros(d + 2);
        g[0] = -u[1 + l] / (rho * rho);
        g[1 + l] = 1.0 / rho;
        g
    };
    let grad_temp = move |u: &RVec| -> RVec {
        let (rho, vel, q, e_int) = prim(u);
        let c_v = g.c_v();
        let mut t = RVec::zeros(d + 2);
        t[0] = (-(e_int + q) + 2.0 * q) / (c_v * rho);
        for l in 0..d {
            t[1 + l] = -vel[l] / (c_v * rho);
        }
        t[d + 1] = 1.0 / (c_v * rho);
        t
    };

    let flux = move |u: &RVec, j: usize| -> RVec {
        let (rho, vel, q, e_int) = prim(u);
        let p = (g.gamma - 1.0) * rho * e_int;
        let mut f = RVec::zeros(d + 2);
        f[0] = u[1 + j];
        for i in 0..d {
            f[1 + i] = rho * vel[i] * vel[j] + if i == j { p } else { 0.0 };
        }
        f[d + 1] = vel[j] * (rho * (e_int + q) + p);
        f
    };

    let flux_jac = move |u: &RVec, j: usize| -> RMat {
        let (rho, vel, q, e_int) = prim(u);
        let gm1 = g.gamma - 1.0;
        let p = gm1 * rho * e_int;
        let h = e_int + q + p / rho;
        // dp/dU.
        let mut pu = RVec::zeros(d + 2);
        pu[0] = gm1 * q;
        for l in 0..d {
            pu[1 + l] = -gm1 * vel[l];
        }
        pu[d + 1] = gm1;
        let mut a = RMat::zeros(d + 2, d + 2);
        a[(0, 1 + j)] = 1.0;
        for i in 0..d {
            a[(1 + i, 0)] = -vel[i] * vel[j];
            a[(1 + i, 1 + i)] += vel[j];
            a[(1 + i, 1 + j)] += vel[i];
            if i == j {
                for col in 0..(d + 2) {
                    a[(1 + i, col)] += pu[col];
                }
            }
        }
        a[(d + 1, 0)] = vel[j] * (pu[0] - h);
        for l in 0..d {
            a[(d + 1, 1 + l)] = vel[j] * pu[1 + l] + if l == j { h } else { 0.0 };
        }
        a[(d + 1, d + 1)] = vel[j] * (1.0 + pu[d + 1]);
        a
    };

    // Viscous flux in direction j: rows are the stress tau_{j i} and the
    // energy transport u . tau_j + kappa dT/dx_j, expanded as B^{jk} U_{x_k}.
    let visc = move |u: &RVec, j: usize, k: usize| -> RMat {
        let (_, vel, _, _) = prim(u);
        let mut b = RMat::zeros(d + 2, d + 2);
        let e: Vec<RVec> = (0..d).map(|l| grad_vel(u, l)).collect();
        for i in 0..d {
            let mut row = RVec::zeros(d + 2);
            if k == i {
                row += &e[j] * g.mu;
            }
            if k == j {
                row += &e[i] * g.mu;
            }
            if j == i {
                row += &e[k] * g.lambda;
            }
            b.set_row(1 + i, &row.transpose());
        }
        let mut erow = &e[j] * (g.mu * vel[k]) + &e[k] * (g.lambda * vel[j]);
        if k == j {
            for i in 0..d {
                erow += &e[i] * (g.mu * vel[i]);
            }
            erow += grad_temp(u) * g.kappa;
        }
        b.set_row(d + 1, &erow.transpose());
        b
    };

    // Chart W = (rho, u_1..u_d, T).
    let from_chart = move |w: &RVec| -> RVec {
        let rho = w[0];
        let q: f64 = (0..d).map(|i| w[1 + i] * w[1 + i]).sum::<f64>() / 2.0;
        let mut u = RVec::zeros(d + 2);
        u[0] = rho;
        for i in 0..d {
            u[1 + i] = rho * w[1 + i];
        }
        u[d + 1] = rho * (g.c_v() * w[d + 1] + q);
        u
    };
    let to_chart = move |u: &RVec| -> RVec {
        let (rho, vel, _, e_int) = prim(u);
        let mut w = RVec::zeros(d + 2);
        w[0] = rho;
        for i in 0..d {
            w[1 + i] = vel[i];
        }
        w[d + 1] = e_int / g.c_v();
        w
    };
    let chart_jac = move |w: &RVec| -> RMat {
        let rho = w[0];
        let q: f64 = (0..d).map(|i| w[1 + i] * w[1 + i]).sum::<f64>() / 2.0;
        let mut m = RMat::zeros(d + 2, d + 2);
        m[(0, 0)] = 1.0;
        for i in 0..d {
            m[(1 + i, 0)] = w[1 + i];
            m[(1 + i, 1 + i)] = rho;
        }
        m[(d + 1, 0)] = g.c_v() * w[d + 1] + q;
        for i in 0..d {
            m[(d + 1, 1 + i)] = rho * w[1 + i];
        }
        m[(d + 1, d + 1)] = rho * g.c_v();
        m
    };
    // (B^{11} U')_II = (tau_{11..1d}, u.tau_1 + kappa T')' in chart
    // derivatives: tau_{1i} = mu u_i' (+ (mu + lambda) u_1' for i = 1).
    let viscous_rows = move |w: &RVec| -> RMat {
        let mut b = RMat::zeros(d + 1, d + 2);
        for i in 0..d {
            b[(i, 1 + i)] += g.mu;
            if i == 0 {
                b[(i, 1)] += g.mu + g.lambda;
            }
        }
        // Energy row: sum_i u_i tau_{1i} + kappa T'.
        for i in 0..d {
            b[(d, 1 + i)] += w[1 + i] * g.mu;
        }
        b[(d, 1)] += w[1] * (g.mu + g.lambda);
        b[(d, d + 1)] = g.kappa;
        b
    };
    // Level set: rho (u_1 - s) = q_rho, so rho = q_rho / (u_1 - s).
    let solve_level = move |w_ii: &RVec, q: &RVec, s: f64| -> Option<RVec> {
        let rel = w_ii[0] - s;
        if rel.abs() < 1e-13 || q[0] / rel <= 0.0 {
            None
        } else {
            Some(RVec::from_element(1, q[0] / rel))
        }
    };

    SystemDefinition {
        name: if d == 1 { "navier_stokes_1d".into() } else { format!("navier_stokes_{d}d") },
        n,
        r: d + 1,
        d,
        component_names: names,
        flux_fn: Box::new(flux),
        flux_jac_fn: Box::new(flux_jac),
        visc_fn: Box::new(visc),
        admissible_fn: Box::new(admissible),
        chart: Some(ProfileChart {
            to_chart: Box::new(to_chart),
            from_chart: Box::new(from_chart),
            jacobian: Box::new(chart_jac),
            viscous_rows: Box::new(viscous_rows),
            solve_level: Box::new(solve_level),
        }),
        symmetrizer: Some(SymmetrizerHook {
            to_w: Box::new(to_chart),
            from_w: Box::new(from_chart),
            du_dw: Box::new(chart_jac),
            // A0~ = diag(p_rho / rho, rho I_d, rho e_T / T) with p = rho R T.
            a0: Box::new(move |w| {
                let (rho, t) = (w[0], w[d + 1]);
                let mut a0 = RMat::zeros(d + 2, d + 2);
                a0[(0, 0)] = g.r_gas * t / rho;
                for i in 0..d {
                    a0[(1 + i, 1 + i)] = rho;
                }
                a0[(d + 1, d + 1)] = rho * g.c_v() / t;
                a0
            }),
            first_order_symmetric: Box::new(move |w| w[0] > 0.0 && w[d + 1] > 0.0),
        }),
    }
}

/// Two-component triangular system: u_t + (u^2/2)_x = u_xx carries the
/// reference front, and v_t + (G(u) v)_x = v_xx with
/// G(u) = amp * u (1 - u^2)^2 transports a passive component whose
/// linearization stays scalar conservation form, hence marginally stable
/// for every amp (its slowest bound state approaches the essential-spectrum
/// edge from below as amp grows). n = r = 2, so no inviscid block is present.
pub fn coupled_burgers(amp: f64) -> SystemDefinition {
    SystemDefinition {
        name: "coupled_burgers".into(),
        n: 2,
        r: 2,
        d: 1,
        component_names: vec!["u".into(), "v".into()],
        flux_fn: Box::new(move |w, _| {
            let (u, v) = (w[0], w[1]);
            let s = 1.0 - u * u;
            RVec::from_vec(vec![u * u / 2.0, amp * u * s * s * v])
        }),
        flux_jac_fn: Box::new(move |w, _| {
            let (u, v) = (w[0], w[1]);
            let s = 1.0 - u * u;
            let g_val = amp * u * s * s;
            let g_prime = amp * (s * s + u * 2.0 * s * (-2.0 * u));
            RMat::from_row_slice(2, 2, &[u, 0.0, g_prime * v, g_val])
        }),
        visc_fn: Box::new(|_, _, _| RMat::identity(2, 2)),
        admissible_fn: Box::new(|_| Ok(())),
        chart: Some(ProfileChart {
            to_chart: Box::new(|u| u.clone()),
            from_chart: Box::new(|w| w.clone()),
            jacobian: Box::new(|_| RMat::identity(2, 2)),
            viscous_rows: Box::new(|_| RMat::identity(2, 2)),
            solve_level: Box::new(|_, _, _| Some(RVec::zeros(0))),
        }),
        symmetrizer: None,
    }
}

/// Two-component conservation law engineered as the positive control for
/// instability detection. Both endpoint states of the front
///     u = -tanh(x/2),  v = 1 - u^2
/// are strictly hyperbolic with speeds {-+1, 2/5} (a Lax 1-shock at s = 0),
/// but the flux Jacobian acquires complex characteristics in a pocket around
/// the origin once kappa > 1/25, and the pocket traps an amplified wave
/// packet: past kappa ~ 5 the confinement cost is paid and the linearization
/// about the front has an unstable complex-conjugate pair (at kappa = 16,
/// lambda ~ 0.21 +- 0.90i) while the essential spectrum, set by the
/// hyperbolic endpoints, stays in Re <= 0. The flux is built so that the
/// profile ODE U' = F(U) - F(U_-) holds for the closed form above exactly.
pub fn elliptic_pocket(kappa: f64) -> SystemDefinition {
    // Profile curve v = eta (1 - u^2); transverse extension (-kappa (1-u^2), a2).
    let (theta, eta, a2) = (0.5, 1.0, 0.4);
    SystemDefinition {
        name: "elliptic_pocket".into(),
        n: 2,
        r: 2,
        d: 1,
        component_names: vec!["u".into(), "v".into()],
        flux_fn: Box::new(move |z, _| {
            let (u, v) = (z[0], z[1]);
            let s = 1.0 - u * u;
            let w = v - eta * s;
            RVec::from_vec(vec![-theta * s - kappa * s * w, 2.0 * eta * theta * u * s + a2 * w])
        }),
        flux_jac_fn: Box::new(move |z, _| {
            let (u, v) = (z[0], z[1]);
            let s = 1.0 - u * u;
            RMat::from_row_slice(
                2,
                2,
                &[
                    2.0 * theta * u + 2.0 * kappa * u * v - 4.0 * eta * kappa * u * s,
                    -kappa * s,
                    2.0 * eta * theta * (1.0 - 3.0 * u * u) + 2.0 * a2 * eta * u,
                    a2,
                ],
            )
        }),
        visc_fn: Box::new(|_, _, _| RMat::identity(2, 2)),
        admissible_fn: Box::new(|_| Ok(())),
        chart: Some(ProfileChart {
            to_chart: Box::new(|u| u.clone()),
            from_chart: Box::new(|w| w.clone()),
            jacobian: Box::new(|_| RMat::identity(2, 2)),
            viscous_rows: Box::new(|_| RMat::identity(2, 2)),
            solve_level: Box::new(|_, _, _| Some(RVec::zeros(0))),
        }),
        symmetrizer: None,
    }
}

pub struct ModelCatalogEntry {
    pub name: &'static str,
    pub parameters: Vec<(&'static str, f64)>,
    pub build: fn(&BTreeMap<String, f64>) -> Result<SystemDefinition, ModelError>,
}

fn get(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

pub fn catalog() -> Vec<ModelCatalogEntry> {
    let gref = GasParams::reference();
    vec![
        ModelCatalogEntry {
            name: "burgers",
            parameters: vec![("d", 1.0)],
            build: |p| {
                let d = get(p, "d", 1.0);
                if d < 1.0 || d.fract() != 0.0 {
                    return Err(ModelError::Parameter(format!("d = {d} must be a positive integer")));
                }
                Ok(burgers(d as usize))
            },
        },
        ModelCatalogEntry {
            name: "isentropic_ns",
            parameters: vec![("gamma", 1.4), ("a", 1.0), ("mu", 0.1)],
            build: |p| {
                let (gamma, a, mu) = (get(p, "gamma", 1.4), get(p, "a", 1.0), get(p, "mu", 0.1));
                if gamma <= 1.0 || a <= 0.0 || mu <= 0.0 {
                    return Err(ModelError::Parameter(
                        "need gamma > 1, a > 0, mu > 0".to_string(),
                    ));
                }
                Ok(isentropic_ns(gamma, a, mu))
            },
        },
        ModelCatalogEntry {
            name: "navier_stokes_1d",
            parameters: vec![
                ("gamma", gref.gamma),
                ("r_gas", gref.r_gas),
                ("mu", gref.mu),
                ("lambda", gref.lambda),
                ("kappa", gref.kappa),
            ],
            build: |p| Ok(navier_stokes(1, gas_from(p)?)),
        },
        ModelCatalogEntry {
            name: "navier_stokes_2d",
            parameters: vec![
                ("gamma", gref.gamma),
                ("r_gas", gref.r_gas),
                ("mu", gref.mu),
                ("lambda", gref.lambda),
                ("kappa", gref.kappa),
            ],
            build: |p| Ok(navier_stokes(2, gas_from(p)?)),
        },
        ModelCatalogEntry {
            name: "coupled_burgers",
            parameters: vec![("amp", 8.0)],
            build: |p| Ok(coupled_burgers(get(p, "amp", 8.0))),
        },
        ModelCatalogEntry {
            name: "elliptic_pocket",
            parameters: vec![("kappa", 16.0)],
            build: |p| Ok(elliptic_pocket(get(p, "kappa", 16.0))),
        },
    ]
}

fn gas_from(p: &BTreeMap<String, f64>) -> Result<GasParams, ModelError> {
    let gref = GasParams::reference();
    let g = GasParams {
        gamma: get(p, "gamma", gref.gamma),
        r_gas: get(p, "r_gas", gref.r_gas),
        mu: get(p, "mu", gref.mu),
        lambda: get(p, "lambda", gref.lambda),
        kappa: get(p, "kappa", gref.kappa),
    };
    if g.gamma <= 1.0 || g.r_gas <= 0.0 || g.mu <= 0.0 || g.kappa <= 0.0 {
        return Err(ModelError::Parameter("need gamma > 1, R > 0, mu > 0, kappa > 0".to_string()));
    }
    if 2.0 * g.mu + g.lambda <= 0.0 || g.mu + g.lambda <= 0.0 {
        return Err(ModelError::Parameter("need mu + lambda > 0 for elliptic stress".to_string()));
    }
    Ok(g)
}

pub fn build_model(
    name: &str,
    params: &BTreeMap<String, f64>,
) -> Result<SystemDefinition, ModelError> {
    for entry in catalog() {
        if entry.name == name {
            for key in params.keys() {
                if !entry.parameters.iter().any(|(k, _)| k == key) {
                    return Err(ModelError::Parameter(format!(
                        "model '{name}' has no parameter '{key}'"
                    )));
                }
            }
            return (entry.build)(params);
        }
    }
    Err(ModelError::UnknownModel(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_admissible(system: &SystemDefinition, rng: &mut ChaCha8Rng) -> RVec {
        loop {
            let u = match system.name.as_str() {
                "burgers" | "coupled_burgers" | "elliptic_pocket" => {
                    RVec::from_fn(system.n, |_, _| rng.gen::<f64>() * 4.0 - 2.0)
                }
                _ => {
                    // Positive density/energy states.
                    let mut u = RVec::zeros(system.n);
                    u[0] = 0.2 + rng.gen::<f64>() * 2.0;
                    for i in 1..(system.n - 1) {
                        u[i] = (rng.gen::<f64>() * 2.0 - 1.0) * u[0];
                    }
                    if system.n >= 2 {
                        let q: f64 =
                            (1..(system.n - 1)).map(|i| u[i] * u[i]).sum::<f64>() / (2.0 * u[0]);
                        u[system.n - 1] = q + u[0] * (0.3 + rng.gen::<f64>() * 2.0);
                    }
                    u
                }
            };
            if system.admissible(&u).is_ok() {
                return u;
            }
        }
    }

    fn all_models() -> Vec<SystemDefinition> {
        vec![
            burgers(1),
            burgers(2),
            isentropic_ns(1.4, 1.0, 0.1),
            navier_stokes(1, GasParams::reference()),
            navier_stokes(2, GasParams::reference()),
            coupled_burgers(8.0),
            elliptic_pocket(16.0),
        ]
    }

    #[test]
    fn burgers_flux_at_two() {
        let sys = burgers(1);
        let u = RVec::from_element(1, 2.0);
        let (f, a) = flux_and_jacobian(&sys, &u, 0).unwrap();
        assert_eq!(f[0], 2.0);
        assert_eq!(a[(0, 0)], 2.0);
        assert_eq!(sys.viscosity_tensor(&u, &RVec::from_element(1, 1.0))[(0, 0)], 1.0);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for sys in all_models() {
            for _ in 0..(100usize.div_ceil(all_models().len())) {
                let u = random_admissible(&sys, &mut rng);
                for j in 0..sys.d {
                    let a = sys.flux_jacobian(&u, j);
                    let fd = fd_flux_jacobian(&sys, &u, j, 1e-6);
                    let rel = (&a - &fd).norm() / a.norm().max(1.0);
                    assert!(rel <= 1e-6, "{}: FD mismatch {rel}", sys.name);
                }
            }
        }
    }

    #[test]
    fn viscosity_first_block_row_zero_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for sys in all_models() {
            for _ in 0..20 {
                let u = random_admissible(&sys, &mut rng);
                sys.block_structure_ok(&u).unwrap();
            }
        }
    }

    #[test]
    fn viscosity_lower_block_elliptic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for sys in all_models() {
            for _ in 0..10 {
                let u = random_admissible(&sys, &mut rng);
                let theta = sys.lower_block_ellipticity(&u, 32);
                assert!(theta > 0.0, "{}: theta = {theta}", sys.name);
            }
        }
    }

    #[test]
    fn zero_direction_gives_zero_tensor() {
        let sys = navier_stokes(2, GasParams::reference());
        let u = RVec::from_vec(vec![1.0, 0.1, -0.2, 2.0]);
        assert_eq!(sys.viscosity_tensor(&u, &RVec::zeros(2)).norm(), 0.0);
    }

    #[test]
    fn ns1d_characteristic_speeds() {
        let g = GasParams::reference();
        let sys = navier_stokes(1, g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let u = random_admissible(&sys, &mut rng);
            let vel = u[1] / u[0];
            let e_int = u[2] / u[0] - vel * vel / 2.0;
            let t = e_int / g.c_v();
            let c = (g.gamma * g.r_gas * t).sqrt();
            // Oracle: numerical eigenvalues of the finite-difference Jacobian.
            let fd = fd_flux_jacobian(&sys, &u, 0, 1e-6);
            let mut eig: Vec<f64> = eigenvalues(&complexify(&fd)).iter().map(|z| z.re).collect();
            eig.sort_by(f64::total_cmp);
            let want = [vel - c, vel, vel + c];
            for (got, want) in eig.iter().zip(want) {
                assert!((got - want).abs() < 1e-4 * (1.0 + want.abs()), "{got} vs {want}");
            }
            // The analytic Jacobian reproduces them tightly.
            let mut eig2: Vec<f64> = eigenvalues(&complexify(&sys.flux_jacobian(&u, 0)))
                .iter()
                .map(|z| z.re)
                .collect();
            eig2.sort_by(f64::total_cmp);
            for (got, want) in eig2.iter().zip(want) {
                assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn ns1d_lower_viscosity_block_eigenvalues() {
        let g = GasParams::reference();
        let sys = navier_stokes(1, g);
        let u = RVec::from_vec(vec![1.3, 0.5, 2.9]);
        let b = sys.viscosity_tensor(&u, &RVec::from_element(1, 1.0));
        let bii = b.view((1, 1), (2, 2)).into_owned();
        let mut eig: Vec<f64> = eigenvalues(&complexify(&bii)).iter().map(|z| z.re).collect();
        eig.sort_by(f64::total_cmp);
        let rho = u[0];
        let mut want = [(2.0 * g.mu + g.lambda) / rho, g.kappa / (g.c_v() * rho)];
        want.sort_by(f64::total_cmp);
        for (got, want) in eig.iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            assert!(*got > 0.0);
        }
    }

    #[test]
    fn hyperbolicity_patterns() {
        let sys = burgers(1);
        let rep = hyperbolicity_report(&sys, &RVec::from_element(1, 0.7), 16).unwrap();
        assert!(rep.real_semisimple && rep.constant_multiplicity);

        let sys = navier_stokes(1, GasParams::reference());
        let u = RVec::from_vec(vec![1.0, 0.4, 2.5]);
        let rep = hyperbolicity_report(&sys, &u, 16).unwrap();
        assert!(rep.real_semisimple && rep.constant_multiplicity);
        assert_eq!(rep.multiplicity_pattern, vec![1, 1, 1]);

        let sys = navier_stokes(2, GasParams::reference());
        let u = RVec::from_vec(vec![1.0, 0.3, -0.2, 2.5]);
        let rep = hyperbolicity_report(&sys, &u, 48).unwrap();
        assert!(rep.real_semisimple && rep.constant_multiplicity);
        // Acoustic modes simple, convective mode of multiplicity d = 2.
        assert_eq!(rep.multiplicity_pattern, vec![1, 1, 2]);
    }

    #[test]
    fn gas_symbol_is_rotation_invariant() {
        let g = GasParams::reference();
        let sys = navier_stokes(2, g);
        let u = RVec::from_vec(vec![1.1, 0.33, -0.22, 2.7]);
        let vel = [u[1] / u[0], u[2] / u[0]];
        let q = (vel[0] * vel[0] + vel[1] * vel[1]) / 2.0;
        let t = (u[3] / u[0] - q) / g.c_v();
        let c = (g.gamma * g.r_gas * t).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..25 {
            let th = rng.gen::<f64>() * std::f64::consts::TAU;
            let xi = RVec::from_vec(vec![th.cos(), th.sin()]);
            let un = vel[0] * xi[0] + vel[1] * xi[1];
            let mut eig: Vec<f64> =
                eigenvalues(&complexify(&sys.flux_symbol(&u, &xi))).iter().map(|z| z.re).collect();
            eig.sort_by(f64::total_cmp);
            let mut want = vec![un - c, un, un, un + c];
            want.sort_by(f64::total_cmp);
            for (got, want) in eig.iter().zip(want) {
                assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn chart_round_trips_and_matches_viscous_flux() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for sys in all_models() {
            let Some(chart) = &sys.chart else { continue };
            for _ in 0..10 {
                let u = random_admissible(&sys, &mut rng);
                let w = (chart.to_chart)(&u);
                let back = (chart.from_chart)(&w);
                assert!((&back - &u).norm() < 1e-10 * (1.0 + u.norm()), "{}", sys.name);
                // dU/dW against finite differences of from_chart.
                let jac = (chart.jacobian)(&w);
                for col in 0..sys.n {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    let h = 1e-6 * (1.0 + w[col].abs());
                    wp[col] += h;
                    wm[col] -= h;
                    let fd = ((chart.from_chart)(&wp) - (chart.from_chart)(&wm)) / (2.0 * h);
                    assert!(
                        (jac.column(col) - &fd).norm() < 1e-6 * (1.0 + jac.norm()),
                        "{} chart jacobian", sys.name
                    );
                }
                // (B^11 U')_II = viscous_rows(W) W' for random tangents.
                let wp = RVec::from_fn(sys.n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                let uprime = &jac * &wp;
                let lhs = (sys.viscosity(&u, 0, 0) * &uprime)
                    .rows(sys.n - sys.r, sys.r)
                    .into_owned();
                let rhs = (chart.viscous_rows)(&w) * &wp;
                assert!((&lhs - &rhs).norm() < 1e-9 * (1.0 + lhs.norm()), "{}", sys.name);
            }
        }
    }

    #[test]
    fn build_model_rejects_unknown_keys() {
        let mut p = BTreeMap::new();
        p.insert("nonsense".to_string(), 1.0);
        assert!(build_model("burgers", &p).is_err());
        assert!(build_model("no_such_model", &BTreeMap::new()).is_err());
        for entry in catalog() {
            assert!((entry.build)(&BTreeMap::new()).is_ok(), "{} default build", entry.name);
        }
    }
}
