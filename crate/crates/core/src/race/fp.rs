//! Implicit finite-volume solver for the Fokker-Planck equation of the
//! augmented integrated-OU race model.
//!
//! Unknowns are cell averages on a uniform `(η, P_L)` grid. Each face flux
//! combines the drift and diffusion in one direction; the η edges and the
//! `W_R` edge carry no flux, and `W_L` is absorbing (zero density on the
//! boundary face). Time stepping is backward Euler, so every step solves
//! one sparse five-point system, here with ILU(0)-preconditioned BiCGSTAB.

use serde::{Deserialize, Serialize};

use super::FpProblem;
use crate::error::{Error, Result};
use crate::stats::norm_cdf;

/// Face-flux discretization of the drift terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convection {
    /// First-order upwinding; adds numerical diffusion `|u| h / 2`.
    Upwind,
    /// Scharfetter-Gummel exponential fitting: exact for constant drift
    /// and diffusion across a face, reduces to upwinding without diffusion.
    ExponentialFitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpGrid {
    pub n_eta: usize,
    pub n_pl: usize,
    pub dt: f64,
}

impl FpGrid {
    /// 200 η cells, `20 W` position cells and a unit time step.
    pub fn standard(w: usize) -> Self {
        FpGrid {
            n_eta: 200,
            n_pl: 20 * w,
            dt: 1.0,
        }
    }

    /// Both resolutions doubled, same time step.
    pub fn refined(&self) -> Self {
        FpGrid {
            n_eta: 2 * self.n_eta,
            n_pl: 2 * self.n_pl,
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpOptions {
    pub grid: FpGrid,
    pub convection: Convection,
    /// Relative residual at which the linear solver stops.
    pub tolerance: f64,
}

impl FpOptions {
    pub fn standard(w: usize) -> Self {
        FpOptions {
            grid: FpGrid::standard(w),
            convection: Convection::ExponentialFitting,
            tolerance: 1e-10,
        }
    }
}

/// Cell-averaged density `p(η, P_L, τ)`, stored position-major
/// (`density[j * n_eta + i]` for η cell `i` and position cell `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct PdfField {
    pub eta_range: (f64, f64),
    pub pl_range: (f64, f64),
    pub n_eta: usize,
    pub n_pl: usize,
    pub density: Vec<f64>,
    pub time: f64,
    pub mass: f64,
}

impl PdfField {
    pub fn cell_area(&self) -> f64 {
        (self.eta_range.1 - self.eta_range.0) / self.n_eta as f64 * (self.pl_range.1 - self.pl_range.0) / self.n_pl as f64
    }

    pub fn eta_centre(&self, i: usize) -> f64 {
        let h = (self.eta_range.1 - self.eta_range.0) / self.n_eta as f64;
        self.eta_range.0 + (i as f64 + 0.5) * h
    }

    /// Marginal density mass of every position cell.
    pub fn position_marginal(&self) -> Vec<f64> {
        let a = self.cell_area();
        (0..self.n_pl)
            .map(|j| self.density[j * self.n_eta..(j + 1) * self.n_eta].iter().sum::<f64>() * a)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpSolution {
    pub field: PdfField,
    /// `1 − mass` at `τ*`.
    pub pr_overtake: f64,
    /// Mass after every step (index 0: initial).
    pub mass_history: Vec<f64>,
    /// Largest per-step difference between the mass lost and the flux
    /// through the absorbing edge.
    pub max_balance_error: f64,
    /// Cells clipped to zero after a solve left them below `−1e-9`.
    pub clipped: usize,
    pub steps: usize,
}

/// `x / (e^x − 1)`.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x / 2.0
    } else {
        x / x.exp_m1()
    }
}

/// Coefficients `(a, b)` of the face flux `a p_left − b p_right` for drift
/// `u` (positive towards `right`), diffusion `d` and spacing `h`.
fn face(u: f64, d: f64, h: f64, scheme: Convection) -> (f64, f64) {
    match scheme {
        Convection::Upwind => (u.max(0.0) + d / h, (-u).max(0.0) + d / h),
        Convection::ExponentialFitting => {
            if d <= 0.0 {
                return (u.max(0.0), (-u).max(0.0));
            }
            let pe = u * h / d;
            (d / h * bernoulli(-pe), d / h * bernoulli(pe))
        }
    }
}

/// Five-point operator `A = I + dt L`.
struct Stencil {
    ni: usize,
    nj: usize,
    diag: Vec<f64>,
    east: Vec<f64>,
    west: Vec<f64>,
    north: Vec<f64>,
    south: Vec<f64>,
}

impl Stencil {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (ni, nj) = (self.ni, self.nj);
        for j in 0..nj {
            for i in 0..ni {
                let k = j * ni + i;
                let mut s = self.diag[k] * x[k];
                if i + 1 < ni {
                    s += self.east[k] * x[k + 1];
                }
                if i > 0 {
                    s += self.west[k] * x[k - 1];
                }
                if j + 1 < nj {
                    s += self.north[k] * x[k + ni];
                }
                if j > 0 {
                    s += self.south[k] * x[k - ni];
                }
                y[k] = s;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Incomplete LU factorization with the sparsity of the stencil.
struct Ilu0 {
    d: Vec<f64>,
}

impl Ilu0 {
    fn new(a: &Stencil) -> Self {
        let ni = a.ni;
        let mut d = a.diag.clone();
        for k in 0..d.len() {
            if k % ni > 0 {
                d[k] -= a.west[k] * a.east[k - 1] / d[k - 1];
            }
            if k >= ni {
                d[k] -= a.south[k] * a.north[k - ni] / d[k - ni];
            }
        }
        Ilu0 { d }
    }

    /// `z = M⁻¹ r`.
    fn solve(&self, a: &Stencil, r: &[f64], z: &mut [f64]) {
        let (ni, n) = (a.ni, r.len());
        for k in 0..n {
            let mut s = r[k];
            if k % ni > 0 {
                s -= a.west[k] * z[k - 1];
            }
            if k >= ni {
                s -= a.south[k] * z[k - ni];
            }
            z[k] = s / self.d[k];
        }
        for k in (0..n).rev() {
            let mut s = 0.0;
            if k % ni + 1 < ni {
                s += a.east[k] * z[k + 1];
            }
            if k + ni < n {
                s += a.north[k] * z[k + ni];
            }
            z[k] -= s / self.d[k];
        }
    }
}

/// ILU(0)-preconditioned BiCGSTAB; `x` holds the initial guess on entry.
fn bicgstab(a: &Stencil, m: &Ilu0, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for k in 0..n {
        r[k] = b[k] - r[k];
    }
    if dot(&r, &r).sqrt() <= tol * bnorm {
        return Ok(0);
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::Stability("BiCGSTAB breakdown".into()));
        }
        let beta = rho_new / rho * alpha / omega;
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        m.solve(a, &p, &mut y);
        a.apply(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        if dot(&s, &s).sqrt() <= tol * bnorm {
            for k in 0..n {
                x[k] += alpha * y[k];
            }
            return Ok(it);
        }
        m.solve(a, &s, &mut z);
        a.apply(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for k in 0..n {
            x[k] += alpha * y[k] + omega * z[k];
            r[k] = s[k] - omega * t[k];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok(it);
        }
    }
    Err(Error::Stability(format!("BiCGSTAB did not reach {tol:e} in {max_iter} iterations")))
}

/// Truncated correlated Gaussian initial density, renormalized to mass 1.
fn initial_density(pr: &FpProblem, eta_range: (f64, f64), ni: usize, nj: usize) -> Result<Vec<f64>> {
    let he = (eta_range.1 - eta_range.0) / ni as f64;
    let hp = (pr.w_right - pr.w_left) / nj as f64;
    let sst = pr.sigma_st();
    let delta = pr.init_delta;
    let mut p = vec![0.0; ni * nj];
    for i in 0..ni {
        let (e0, e1) = (eta_range.0 + i as f64 * he, eta_range.0 + (i + 1) as f64 * he);
        let eta = 0.5 * (e0 + e1);
        // η mass of the cell, then P_L | η spread over position cells
        let (w_eta, mean_p) = if sst > 0.0 {
            (
                norm_cdf((e1 - pr.m) / sst) - norm_cdf((e0 - pr.m) / sst),
                pr.init_rho * delta * (eta - pr.m) / sst,
            )
        } else {
            (1.0, 0.0)
        };
        let sd_p = delta * (1.0 - pr.init_rho * pr.init_rho).max(0.0).sqrt();
        for j in 0..nj {
            let (p0, p1) = (pr.w_left + j as f64 * hp, pr.w_left + (j + 1) as f64 * hp);
            let w_p = if sd_p > 0.0 {
                norm_cdf((p1 - mean_p) / sd_p) - norm_cdf((p0 - mean_p) / sd_p)
            } else if (p0..p1).contains(&mean_p) {
                1.0
            } else {
                0.0
            };
            p[j * ni + i] = w_eta * w_p / (he * hp);
        }
    }
    let mass: f64 = p.iter().sum::<f64>() * he * hp;
    if !(mass > 0.0) {
        return Err(Error::Domain("initial density has no mass inside the window".into()));
    }
    p.iter_mut().for_each(|x| *x /= mass);
    Ok(p)
}

/// Advances the density from `τ = 0` to `τ*` and returns the absorbed mass.
pub fn fp_solve(pr: &FpProblem, opts: &FpOptions) -> Result<FpSolution> {
    pr.validate()?;
    let FpGrid { n_eta: ni0, n_pl: nj, dt } = opts.grid;
    let sst = pr.sigma_st();
    // without η noise the η axis collapses to a single cell at m
    let ni = if sst > 0.0 { ni0 } else { 1 };
    let half = if sst > 0.0 { 4.0 * sst } else { 0.5 };
    let eta_range = (pr.m - half, pr.m + half);
    let he = (eta_range.1 - eta_range.0) / ni as f64;
    let hp = (pr.w_right - pr.w_left) / nj as f64;
    let d_eta = 0.5 * pr.sigma1_sq;
    let d_p = 0.5 * pr.sigma2 * pr.sigma2;
    let n = ni * nj;

    // η faces: drift -b (η - m) evaluated on the face
    let eta_faces: Vec<(f64, f64)> = (0..ni.saturating_sub(1))
        .map(|i| {
            let eta_face = eta_range.0 + (i + 1) as f64 * he;
            face(-pr.b * (eta_face - pr.m), d_eta, he, opts.convection)
        })
        .collect();
    let etas: Vec<f64> = (0..ni).map(|i| eta_range.0 + (i as f64 + 0.5) * he).collect();
    let p_faces: Vec<(f64, f64)> = etas.iter().map(|&e| face(e, d_p, hp, opts.convection)).collect();
    // absorbing edge: boundary value 0 at half a cell from the first centre
    let outflow: Vec<f64> = etas.iter().map(|&e| face(e, d_p, hp / 2.0, opts.convection).1).collect();

    let mut st = Stencil {
        ni,
        nj,
        diag: vec![1.0; n],
        east: vec![0.0; n],
        west: vec![0.0; n],
        north: vec![0.0; n],
        south: vec![0.0; n],
    };
    for j in 0..nj {
        for i in 0..ni {
            let k = j * ni + i;
            let mut diag = 0.0;
            if i + 1 < ni {
                let (a, b) = eta_faces[i];
                diag += a / he;
                st.east[k] = -dt * b / he;
            }
            if i > 0 {
                let (a, b) = eta_faces[i - 1];
                diag += b / he;
                st.west[k] = -dt * a / he;
            }
            let (c, d) = p_faces[i];
            if j + 1 < nj {
                diag += c / hp;
                st.north[k] = -dt * d / hp;
            }
            if j > 0 {
                diag += d / hp;
                st.south[k] = -dt * c / hp;
            } else {
                diag += outflow[i] / hp;
            }
            st.diag[k] = 1.0 + dt * diag;
        }
    }

    let ilu = Ilu0::new(&st);
    let mut p = initial_density(pr, eta_range, ni, nj)?;
    let area = he * hp;
    let mut mass = 1.0;
    let steps = (pr.tau_star / dt).ceil() as usize;
    let mut history = Vec::with_capacity(steps + 1);
    history.push(mass);
    let mut clipped = 0usize;
    let mut max_balance_error: f64 = 0.0;
    let mut next = p.clone();
    for _ in 0..steps {
        bicgstab(&st, &ilu, &p, &mut next, opts.tolerance, 10_000)?;
        let absorbed: f64 = (0..ni).map(|i| outflow[i] * next[i]).sum::<f64>() * dt * he;
        for x in next.iter_mut() {
            if *x < 0.0 {
                if *x < -1e-9 {
                    clipped += 1;
                }
                *x = 0.0;
            }
        }
        let new_mass = next.iter().sum::<f64>() * area;
        if new_mass > mass + 1e-6 {
            return Err(Error::Stability(format!("probability mass grew from {mass} to {new_mass}")));
        }
        max_balance_error = max_balance_error.max(((mass - new_mass) - absorbed).abs());
        mass = new_mass;
        history.push(mass);
        std::mem::swap(&mut p, &mut next);
    }
    if clipped > 0 {
        log::warn!("{clipped} density cells below -1e-9 were clipped");
    }
    let field = PdfField {
        eta_range,
        pl_range: (pr.w_left, pr.w_right),
        n_eta: ni,
        n_pl: nj,
        density: p,
        time: steps as f64 * dt,
        mass,
    };
    Ok(FpSolution {
        field,
        pr_overtake: (1.0 - mass).clamp(0.0, 1.0),
        mass_history: history,
        max_balance_error,
        clipped,
        steps,
    })
}
