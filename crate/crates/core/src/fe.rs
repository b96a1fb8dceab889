//! Independent finite-difference oracle for transient conduction with
//! convective (Robin) boundaries, in 1D and on 2D tensor-product grids.
//!
//! Space: second-order central differences with ghost-node treatment of the
//! Robin condition. Time: Crank–Nicolson, unconditionally stable and second
//! order; intervals that start from incompatible initial data or that contain
//! an air-temperature kink are integrated with two backward-Euler half-steps
//! instead, which suppresses the ringing Crank–Nicolson exhibits on rough
//! data while leaving the global order intact.

use crate::error::{CoreError, Result};
use crate::physics::{AirProfile, MaterialProps};
use serde::{Deserialize, Serialize};

/// Discretization parameters for the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    /// Elements per direction (nodes = elements + 1).
    pub elements: usize,
    /// Time step, s.
    pub dt: f64,
    /// End time, s. The final step is shortened to land on it exactly.
    pub t_end: f64,
}

impl MeshConfig {
    pub fn new(elements: usize, dt: f64, t_end: f64) -> Result<Self> {
        if elements < 2 {
            return Err(CoreError::contract("mesh needs at least 2 elements"));
        }
        if !(dt > 0.0) || !(t_end >= dt) {
            return Err(CoreError::contract("require dt > 0 and t_end >= dt"));
        }
        Ok(Self { elements, dt, t_end })
    }
}

/// Boundary condition on one face of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeBc {
    Insulated,
    /// Convective exchange with the oven air, h in W/(m²·K).
    Convective { h: f64 },
}

impl EdgeBc {
    fn h(&self) -> f64 {
        match self {
            EdgeBc::Insulated => 0.0,
            EdgeBc::Convective { h } => *h,
        }
    }
}

/// Space–time temperature history produced by a solve. Temperatures are °C,
/// stored one slice per time, nodes in x-major order for 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldHistory {
    pub node_x: Vec<f64>,
    /// Empty for 1D histories.
    pub node_y: Vec<f64>,
    pub times: Vec<f64>,
    pub temps: Vec<Vec<f64>>,
}

impl FieldHistory {
    pub fn is_two_d(&self) -> bool {
        !self.node_y.is_empty()
    }

    fn node_index(&self, ix: usize, iy: usize) -> usize {
        ix * self.node_y.len().max(1) + iy
    }

    /// Multilinear interpolation in space, linear in time. `y` must be given
    /// exactly when the history is 2D.
    pub fn probe(&self, x: f64, y: Option<f64>, t: f64) -> Result<f64> {
        let (kt, wt) = locate(&self.times, t).ok_or_else(|| {
            CoreError::domain(format!("probe time {t} s outside stored range"))
        })?;
        let lo = self.probe_slice(kt, x, y)?;
        if wt == 0.0 {
            return Ok(lo);
        }
        let hi = self.probe_slice(kt + 1, x, y)?;
        Ok(lo + wt * (hi - lo))
    }

    fn probe_slice(&self, slice: usize, x: f64, y: Option<f64>) -> Result<f64> {
        let temps = &self.temps[slice];
        let (ix, wx) = locate(&self.node_x, x)
            .ok_or_else(|| CoreError::domain(format!("probe x = {x} m outside grid")))?;
        if self.is_two_d() {
            let y = y.ok_or_else(|| CoreError::domain("2D history probed without y"))?;
            let (iy, wy) = locate(&self.node_y, y)
                .ok_or_else(|| CoreError::domain(format!("probe y = {y} m outside grid")))?;
            let ix1 = (ix + 1).min(self.node_x.len() - 1);
            let iy1 = (iy + 1).min(self.node_y.len() - 1);
            let t00 = temps[self.node_index(ix, iy)];
            let t01 = temps[self.node_index(ix, iy1)];
            let t10 = temps[self.node_index(ix1, iy)];
            let t11 = temps[self.node_index(ix1, iy1)];
            let a = t00 + wy * (t01 - t00);
            let b = t10 + wy * (t11 - t10);
            Ok(a + wx * (b - a))
        } else {
            if y.is_some() {
                return Err(CoreError::domain("1D history probed with a y coordinate"));
            }
            let ix1 = (ix + 1).min(self.node_x.len() - 1);
            Ok(temps[ix] + wx * (temps[ix1] - temps[ix]))
        }
    }
}

/// Find the cell of a sorted coordinate vector containing `v`.
/// Returns (lower index, fractional weight), or None when out of range.
fn locate(coords: &[f64], v: f64) -> Option<(usize, f64)> {
    let first = *coords.first()?;
    let last = *coords.last()?;
    let span = (last - first).abs().max(1.0);
    if v < first - 1e-12 * span || v > last + 1e-12 * span {
        return None;
    }
    let v = v.clamp(first, last);
    let idx = coords.partition_point(|&c| c <= v).min(coords.len() - 1);
    let lo = idx.saturating_sub(1);
    if coords[lo + 1] == coords[lo] {
        return Some((lo, 0.0));
    }
    Some((lo, (v - coords[lo]) / (coords[lo + 1] - coords[lo])))
}

/// Shared time-stepping plan: record times plus which intervals need the
/// backward-Euler half-step treatment.
struct StepPlan {
    times: Vec<f64>,
    /// smooth[k] == false: integrate interval k with two BE half-steps.
    smooth: Vec<bool>,
}

fn plan_steps(
    mesh: &MeshConfig,
    profile: &AirProfile,
    init_temp: f64,
    any_convective: bool,
) -> Result<StepPlan> {
    if profile.total_minutes * 60.0 < mesh.t_end - 1e-9 {
        return Err(CoreError::domain(format!(
            "air profile ends at {} s but the solve needs {} s",
            profile.total_minutes * 60.0,
            mesh.t_end
        )));
    }
    let mut times = vec![0.0];
    let mut t = 0.0;
    while t < mesh.t_end - 1e-9 {
        t = (t + mesh.dt).min(mesh.t_end);
        times.push(t);
    }
    let kinks_s: Vec<f64> = profile.kink_times().iter().map(|k| k * 60.0).collect();
    let incompatible = any_convective
        && (profile.temperature(0.0)? - init_temp).abs() > 1e-9 * init_temp.abs().max(1.0);
    let mut smooth = vec![true; times.len() - 1];
    for k in 0..smooth.len() {
        if incompatible && k < 2 {
            smooth[k] = false;
        }
        // a kink strictly inside the interval breaks the trapezoidal forcing rule
        let (a, b) = (times[k], times[k + 1]);
        if kinks_s
            .iter()
            .any(|&kk| kk > a + 1e-9 && kk < b - 1e-9)
        {
            smooth[k] = false;
        }
    }
    Ok(StepPlan { times, smooth })
}

/// Bounds implied by the discrete maximum principle for a given run.
fn solution_bounds(profile: &AirProfile, init_temp: f64, t_end_s: f64) -> (f64, f64) {
    let (lo, hi) = profile.range(t_end_s / 60.0);
    (lo.min(init_temp), hi.max(init_temp))
}

fn check_slice(slice: &[f64], bounds: (f64, f64), t: f64) -> Result<()> {
    let tol = 1e-8 * (bounds.1 - bounds.0).abs().max(1.0);
    for &v in slice {
        if !v.is_finite() {
            return Err(CoreError::Solver(format!("non-finite temperature at t = {t} s")));
        }
        if v < bounds.0 - tol || v > bounds.1 + tol {
            return Err(CoreError::Solver(format!(
                "maximum principle violated at t = {t} s: {v} outside [{}, {}]",
                bounds.0, bounds.1
            )));
        }
    }
    Ok(())
}

/// Solve the 1D problem on [0, L] with convective coefficients `h1` (x = 0)
/// and `h2` (x = L); h = 0 means insulated.
pub fn solve_1d(
    props: &MaterialProps,
    length: f64,
    h1: f64,
    h2: f64,
    profile: &AirProfile,
    init_temp: f64,
    mesh: &MeshConfig,
) -> Result<FieldHistory> {
    if !(length > 0.0) {
        return Err(CoreError::contract("length must be > 0"));
    }
    if h1 < 0.0 || h2 < 0.0 {
        return Err(CoreError::contract("heat transfer coefficients must be >= 0"));
    }
    let n = mesh.elements;
    let nodes = n + 1;
    let dx = length / n as f64;
    let alpha = props.diffusivity();
    let lam = alpha / (dx * dx);
    let beta1 = 2.0 * alpha * h1 / (dx * props.k);
    let beta2 = 2.0 * alpha * h2 / (dx * props.k);

    // dT/dt = A·T + c(t): tridiagonal A plus boundary forcing proportional to T∞.
    let mut lower = vec![0.0; nodes];
    let mut diag = vec![0.0; nodes];
    let mut upper = vec![0.0; nodes];
    diag[0] = -2.0 * lam - beta1;
    upper[0] = 2.0 * lam;
    for j in 1..nodes - 1 {
        lower[j] = lam;
        diag[j] = -2.0 * lam;
        upper[j] = lam;
    }
    lower[nodes - 1] = 2.0 * lam;
    diag[nodes - 1] = -2.0 * lam - beta2;
    let forcing = |t_s: f64| -> Result<(f64, f64)> {
        let air = profile.temperature(t_s / 60.0)?;
        Ok((beta1 * air, beta2 * air))
    };

    let plan = plan_steps(mesh, profile, init_temp, h1 > 0.0 || h2 > 0.0)?;
    let bounds = solution_bounds(profile, init_temp, mesh.t_end);

    let mut temps = Vec::with_capacity(plan.times.len());
    let mut current = vec![init_temp; nodes];
    temps.push(current.clone());

    let apply_a = |t: &[f64], out: &mut [f64]| {
        out[0] = diag[0] * t[0] + upper[0] * t[1];
        for j in 1..nodes - 1 {
            out[j] = lower[j] * t[j - 1] + diag[j] * t[j] + upper[j] * t[j + 1];
        }
        out[nodes - 1] = lower[nodes - 1] * t[nodes - 2] + diag[nodes - 1] * t[nodes - 1];
    };

    let mut rhs = vec![0.0; nodes];
    let mut at = vec![0.0; nodes];
    for k in 0..plan.times.len() - 1 {
        let (t0, t1) = (plan.times[k], plan.times[k + 1]);
        if plan.smooth[k] {
            // Crank–Nicolson: (I − τ/2 A) T' = T + τ/2 (A T + c(t0) + c(t1))
            let tau = t1 - t0;
            apply_a(&current, &mut at);
            let (ca0, cb0) = forcing(t0)?;
            let (ca1, cb1) = forcing(t1)?;
            for j in 0..nodes {
                rhs[j] = current[j] + 0.5 * tau * at[j];
            }
            rhs[0] += 0.5 * tau * (ca0 + ca1);
            rhs[nodes - 1] += 0.5 * tau * (cb0 + cb1);
            solve_tridiag_shifted(&lower, &diag, &upper, 0.5 * tau, &rhs, &mut current);
        } else {
            // two backward-Euler half-steps
            let half = 0.5 * (t1 - t0);
            for sub in 0..2 {
                let t_next = t0 + half * (sub + 1) as f64;
                let (ca, cb) = forcing(t_next)?;
                rhs.copy_from_slice(&current);
                rhs[0] += half * ca;
                rhs[nodes - 1] += half * cb;
                solve_tridiag_shifted(&lower, &diag, &upper, half, &rhs, &mut current);
            }
        }
        check_slice(&current, bounds, t1)?;
        temps.push(current.clone());
    }

    Ok(FieldHistory {
        node_x: (0..nodes).map(|j| j as f64 * dx).collect(),
        node_y: Vec::new(),
        times: plan.times,
        temps,
    })
}

/// Solve (I − s·A)·x = rhs for tridiagonal A given by (lower, diag, upper),
/// via the Thomas algorithm. The shifted system is strictly diagonally
/// dominant for s > 0, so no pivoting is needed.
fn solve_tridiag_shifted(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    s: f64,
    rhs: &[f64],
    x: &mut [f64],
) {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    let b0 = 1.0 - s * diag[0];
    c_prime[0] = -s * upper[0] / b0;
    d_prime[0] = rhs[0] / b0;
    for j in 1..n {
        let a = -s * lower[j];
        let b = 1.0 - s * diag[j];
        let c = -s * upper[j];
        let denom = b - a * c_prime[j - 1];
        c_prime[j] = c / denom;
        d_prime[j] = (rhs[j] - a * d_prime[j - 1]) / denom;
    }
    x[n - 1] = d_prime[n - 1];
    for j in (0..n - 1).rev() {
        x[j] = d_prime[j] - c_prime[j] * x[j + 1];
    }
}

/// Boundary conditions for the four edges of the 2D domain, in the order
/// x = 0, x = Lx, y = 0, y = Ly.
pub type EdgeBcs = [EdgeBc; 4];

/// Solve the 2D problem on [0,Lx] × [0,Ly]. Same scheme as [`solve_1d`] on a
/// tensor-product grid; the shifted operator is factored once per step size.
pub fn solve_2d(
    props: &MaterialProps,
    lx: f64,
    ly: f64,
    bcs: &EdgeBcs,
    profile: &AirProfile,
    init_temp: f64,
    mesh: &MeshConfig,
) -> Result<FieldHistory> {
    if !(lx > 0.0 && ly > 0.0) {
        return Err(CoreError::contract("lengths must be > 0"));
    }
    for bc in bcs {
        if bc.h() < 0.0 {
            return Err(CoreError::contract("heat transfer coefficients must be >= 0"));
        }
    }
    let n = mesh.elements;
    let (nx, ny) = (n, n);
    let (nodes_x, nodes_y) = (nx + 1, ny + 1);
    let total = nodes_x * nodes_y;
    let dx = lx / nx as f64;
    let dy = ly / ny as f64;
    let alpha = props.diffusivity();
    let (lam_x, lam_y) = (alpha / (dx * dx), alpha / (dy * dy));
    let beta = |bc: EdgeBc, d: f64| 2.0 * alpha * bc.h() / (d * props.k);
    let (bx0, bx1) = (beta(bcs[0], dx), beta(bcs[1], dx));
    let (by0, by1) = (beta(bcs[2], dy), beta(bcs[3], dy));

    // Assemble dense A (row-major) and the T∞ coefficient of the forcing.
    let idx = |ix: usize, iy: usize| ix * nodes_y + iy;
    let mut a = vec![0.0; total * total];
    let mut force_coeff = vec![0.0; total];
    for ix in 0..nodes_x {
        for iy in 0..nodes_y {
            let row = idx(ix, iy);
            let mut diag = 0.0;
            // x-direction stencil
            if ix == 0 {
                a[row * total + idx(1, iy)] += 2.0 * lam_x;
                diag += -2.0 * lam_x - bx0;
                force_coeff[row] += bx0;
            } else if ix == nx {
                a[row * total + idx(nx - 1, iy)] += 2.0 * lam_x;
                diag += -2.0 * lam_x - bx1;
                force_coeff[row] += bx1;
            } else {
                a[row * total + idx(ix - 1, iy)] += lam_x;
                a[row * total + idx(ix + 1, iy)] += lam_x;
                diag += -2.0 * lam_x;
            }
            // y-direction stencil
            if iy == 0 {
                a[row * total + idx(ix, 1)] += 2.0 * lam_y;
                diag += -2.0 * lam_y - by0;
                force_coeff[row] += by0;
            } else if iy == ny {
                a[row * total + idx(ix, ny - 1)] += 2.0 * lam_y;
                diag += -2.0 * lam_y - by1;
                force_coeff[row] += by1;
            } else {
                a[row * total + idx(ix, iy - 1)] += lam_y;
                a[row * total + idx(ix, iy + 1)] += lam_y;
                diag += -2.0 * lam_y;
            }
            a[row * total + row] += diag;
        }
    }

    let any_convective = bcs.iter().any(|bc| bc.h() > 0.0);
    let plan = plan_steps(mesh, profile, init_temp, any_convective)?;
    let bounds = solution_bounds(profile, init_temp, mesh.t_end);

    // LU factors of (I − s·A) keyed by step size; the half-step factor equals
    // the Crank–Nicolson factor for the same interval, so at most two arise.
    let mut factors: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut factor_for = |s: f64| -> usize {
        if let Some(i) = factors.iter().position(|(fs, _)| (fs - s).abs() < 1e-15) {
            return i;
        }
        let mut m = vec![0.0; total * total];
        for r in 0..total {
            for c in 0..total {
                m[r * total + c] = -s * a[r * total + c];
            }
            m[r * total + r] += 1.0;
        }
        lu_factor_in_place(&mut m, total);
        factors.push((s, m));
        factors.len() - 1
    };

    let mut temps = Vec::with_capacity(plan.times.len());
    let mut current = vec![init_temp; total];
    temps.push(current.clone());
    let mut rhs = vec![0.0; total];
    let mut at = vec![0.0; total];

    for k in 0..plan.times.len() - 1 {
        let (t0, t1) = (plan.times[k], plan.times[k + 1]);
        if plan.smooth[k] {
            let tau = t1 - t0;
            let air0 = profile.temperature(t0 / 60.0)?;
            let air1 = profile.temperature(t1 / 60.0)?;
            mat_vec(&a, total, &current, &mut at);
            for r in 0..total {
                rhs[r] = current[r]
                    + 0.5 * tau * (at[r] + force_coeff[r] * (air0 + air1));
            }
            let f = factor_for(0.5 * tau);
            lu_solve(&factors[f].1, total, &rhs, &mut current);
        } else {
            let half = 0.5 * (t1 - t0);
            let f = factor_for(half);
            for sub in 0..2 {
                let t_next = t0 + half * (sub + 1) as f64;
                let air = profile.temperature(t_next / 60.0)?;
                for r in 0..total {
                    rhs[r] = current[r] + half * force_coeff[r] * air;
                }
                lu_solve(&factors[f].1, total, &rhs, &mut current);
            }
        }
        check_slice(&current, bounds, t1)?;
        temps.push(current.clone());
    }

    Ok(FieldHistory {
        node_x: (0..nodes_x).map(|i| i as f64 * dx).collect(),
        node_y: (0..nodes_y).map(|j| j as f64 * dy).collect(),
        times: plan.times,
        temps,
    })
}

fn mat_vec(a: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..n {
        let row = &a[r * n..(r + 1) * n];
        let mut acc = 0.0;
        for c in 0..n {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

/// In-place LU factorization without pivoting; valid for the strictly
/// diagonally dominant shifted operators used here.
fn lu_factor_in_place(m: &mut [f64], n: usize) {
    for k in 0..n {
        let pivot = m[k * n + k];
        for r in k + 1..n {
            let factor = m[r * n + k] / pivot;
            m[r * n + k] = factor;
            if factor != 0.0 {
                for c in k + 1..n {
                    m[r * n + c] -= factor * m[k * n + c];
                }
            }
        }
    }
}

fn lu_solve(lu: &[f64], n: usize, rhs: &[f64], x: &mut [f64]) {
    x.copy_from_slice(rhs);
    for r in 1..n {
        let mut acc = x[r];
        for c in 0..r {
            acc -= lu[r * n + c] * x[c];
        }
        x[r] = acc;
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in r + 1..n {
            acc -= lu[r * n + c] * x[c];
        }
        x[r] = acc / lu[r * n + r];
    }
}
