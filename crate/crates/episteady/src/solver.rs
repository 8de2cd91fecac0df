//! Shared nonlinear solver kernels: projected damped Newton for the
//! semilinear elliptic problems and a bracketed Illinois root-finder for the
//! scalar outer equations.

use crate::error::{Result, SimError};
use crate::grid::{inf_norm, Grid};
use crate::linalg::BandMatrix;

/// Knobs for [`damped_newton`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonOpts {
    /// Convergence threshold on the residual max-norm.
    pub tol: f64,
    pub max_iters: usize,
    /// Backtracking halvings per step before declaring a stall.
    pub max_backtracks: usize,
}

impl Default for NewtonOpts {
    fn default() -> Self {
        NewtonOpts { tol: 1e-12, max_iters: 60, max_backtracks: 30 }
    }
}

/// Convergence report for [`damped_newton`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonInfo {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Projected damped Newton on F(x) = 0 with banded Jacobians.
///
/// Each step solves J delta = -F, then backtracks (halving, with the iterate
/// re-projected into its admissible box each try) until the residual norm
/// decreases. Returns an error only when a Jacobian is singular or the line
/// search cannot decrease the residual at all; running out of iterations
/// reports `converged = false` so callers can decide how to react.
pub fn damped_newton(
    x: &mut Vec<f64>,
    mut residual: impl FnMut(&[f64], &mut Vec<f64>),
    mut jacobian: impl FnMut(&[f64]) -> BandMatrix,
    mut project: impl FnMut(&mut [f64]),
    opts: &NewtonOpts,
) -> Result<NewtonInfo> {
    let n = x.len();
    let mut f = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut f_trial = vec![0.0; n];
    project(x);
    residual(x, &mut f);
    let mut norm = inf_norm(&f);
    let mut iterations = 0;
    while norm > opts.tol && iterations < opts.max_iters {
        if !norm.is_finite() {
            return Err(SimError::numerics("Newton residual is not finite"));
        }
        let jac = jacobian(x);
        let lu = jac.lu_factor()?;
        let mut delta = f.clone();
        for v in &mut delta {
            *v = -*v;
        }
        lu.solve_in_place(&mut delta);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_backtracks {
            for i in 0..n {
                trial[i] = x[i] + step * delta[i];
            }
            project(&mut trial);
            residual(&trial, &mut f_trial);
            let trial_norm = inf_norm(&f_trial);
            if trial_norm.is_finite() && trial_norm < norm {
                x.copy_from_slice(&trial);
                f.copy_from_slice(&f_trial);
                norm = trial_norm;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // Flat or non-descending direction: either we are at the bottom of
            // a residual plateau (converged-enough) or genuinely stuck.
            return Ok(NewtonInfo { iterations, residual: norm, converged: norm <= opts.tol });
        }
    }
    Ok(NewtonInfo { iterations, residual: norm, converged: norm <= opts.tol })
}

/// Bracketed scalar root-finding by the Illinois variant of regula falsi:
/// keeps the bracket of a sign change, converges superlinearly on smooth
/// functions, and never evaluates outside [lo, hi].
///
/// `f(lo)` and `f(hi)` must have opposite signs (zero endpoints return
/// immediately). Stops when the bracket is narrower than
/// `tol_x * max(1, |root|)` or |f| <= tol_f.
pub fn illinois_root(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    mut flo: f64,
    mut fhi: f64,
    tol_x: f64,
    tol_f: f64,
    max_iters: usize,
) -> Result<(f64, f64)> {
    if flo == 0.0 {
        return Ok((lo, flo));
    }
    if fhi == 0.0 {
        return Ok((hi, fhi));
    }
    if flo.signum() == fhi.signum() {
        return Err(SimError::numerics(format!(
            "no sign change in bracket [{lo}, {hi}] (f = {flo} .. {fhi})"
        )));
    }
    let mut best = (lo, flo);
    for _ in 0..max_iters {
        // Secant candidate, safeguarded to the strict interior; fall back to
        // the midpoint when the secant degenerates.
        let mut mid = (lo * fhi - hi * flo) / (fhi - flo);
        let width = hi - lo;
        if !mid.is_finite() || mid <= lo + 0.01 * width || mid >= hi - 0.01 * width {
            mid = 0.5 * (lo + hi);
        }
        let fmid = f(mid)?;
        if fmid.abs() < best.1.abs() {
            best = (mid, fmid);
        }
        if fmid == 0.0 || fmid.abs() <= tol_f {
            return Ok((mid, fmid));
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
            fhi *= 0.5; // Illinois weighting keeps the stale end honest
        } else {
            hi = mid;
            fhi = fmid;
            flo *= 0.5;
        }
        if (hi - lo) <= tol_x * mid.abs().max(1.0) {
            let (xb, fb) = best;
            // Prefer the best evaluated point inside the final bracket.
            if xb >= lo && xb <= hi {
                return Ok((xb, fb));
            }
            return Ok((mid, fmid));
        }
    }
    Err(SimError::numerics(format!(
        "root-find did not converge in {max_iters} iterations (bracket [{lo}, {hi}])"
    )))
}

/// Solve the semilinear Neumann problem `d (L u)_i + f(i, u_i) = 0` on a grid
/// by projected damped Newton with a banded Jacobian. `dfdu` is the partial
/// derivative of the reaction with respect to `u`, `bounds` the admissible box
/// every iterate is clamped into, and `u0` the starting iterate (also the warm
/// start when continuing in a parameter).
pub fn solve_semilinear(
    grid: &Grid,
    diffusion: f64,
    mut f: impl FnMut(usize, f64) -> f64,
    dfdu: impl Fn(usize, f64) -> f64,
    bounds: (f64, f64),
    mut u: Vec<f64>,
    opts: &NewtonOpts,
) -> Result<(Vec<f64>, NewtonInfo)> {
    let n = grid.n_nodes();
    let mut lap = vec![0.0; n];
    let info = damped_newton(
        &mut u,
        |u, out| {
            grid.apply_laplacian(u, &mut lap);
            for i in 0..n {
                out[i] = diffusion * lap[i] + f(i, u[i]);
            }
        },
        |u| grid.assemble(diffusion, |i| dfdu(i, u[i])),
        |u| {
            for v in u.iter_mut() {
                *v = v.clamp(bounds.0, bounds.1);
            }
        },
        opts,
    )?;
    Ok((u, info))
}

/// Monotone-increasing scalar equation g(x) = target on x > 0: brackets by
/// geometric growth from `x0` (capped at `cap`), then calls [`illinois_root`].
pub fn solve_increasing(
    mut g: impl FnMut(f64) -> Result<f64>,
    target: f64,
    x0: f64,
    cap: f64,
    tol: f64,
) -> Result<f64> {
    let mut lo = x0.max(1e-300);
    let mut glo = g(lo)? - target;
    // Walk down while still above the target.
    let mut guard = 0;
    while glo > 0.0 {
        lo *= 0.25;
        if lo < 1e-280 {
            return Err(SimError::numerics(
                "monotone solve: no lower bracket above x = 1e-280",
            ));
        }
        glo = g(lo)? - target;
        guard += 1;
        if guard > 2000 {
            return Err(SimError::numerics("monotone solve: lower bracket search stalled"));
        }
    }
    let mut hi = (lo * 2.0).max(x0);
    let mut ghi = g(hi)? - target;
    guard = 0;
    while ghi < 0.0 {
        hi *= 2.0;
        if hi > cap {
            return Err(SimError::numerics(format!(
                "monotone solve: no upper bracket below the cap {cap:e}"
            )));
        }
        ghi = g(hi)? - target;
        guard += 1;
        if guard > 2000 {
            return Err(SimError::numerics("monotone solve: upper bracket search stalled"));
        }
    }
    let scale = target.abs().max(1.0);
    let (x, _) = illinois_root(
        |x| Ok(g(x)? - target),
        lo,
        hi,
        glo,
        ghi,
        tol,
        tol * scale,
        300,
    )?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn illinois_finds_cubic_root() {
        let f = |x: f64| Ok(x * x * x - 2.0);
        let (root, _) = illinois_root(f, 0.0, 2.0, -2.0, 6.0, 1e-14, 1e-14, 200).unwrap();
        assert!((root - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn illinois_rejects_same_sign() {
        let f = |x: f64| Ok(x + 10.0);
        assert!(illinois_root(f, 0.0, 1.0, 10.0, 11.0, 1e-12, 1e-12, 50).is_err());
    }

    #[test]
    fn solve_increasing_brackets_up_and_down() {
        // g(x) = x^3, target 8 from a tiny start and from a huge start.
        let g = |x: f64| Ok(x * x * x);
        let a = solve_increasing(g, 8.0, 1e-6, 1e9, 1e-13).unwrap();
        assert!((a - 2.0).abs() < 1e-10, "{a}");
        let b = solve_increasing(g, 8.0, 1e5, 1e9, 1e-13).unwrap();
        assert!((b - 2.0).abs() < 1e-10, "{b}");
    }

    #[test]
    fn newton_solves_scalarized_quadratic() {
        // Solve x_i^2 = c_i componentwise through the banded machinery.
        let c = [4.0, 9.0, 16.0];
        let mut x = vec![1.0, 1.0, 1.0];
        let info = damped_newton(
            &mut x,
            |x, f| {
                for i in 0..3 {
                    f[i] = x[i] * x[i] - c[i];
                }
            },
            |x| {
                let mut j = BandMatrix::zero(3, 1, 1);
                for i in 0..3 {
                    j.set(i, i, 2.0 * x[i]);
                }
                j
            },
            |_| {},
            &NewtonOpts { tol: 1e-13, max_iters: 60, max_backtracks: 30 },
        )
        .unwrap();
        assert!(info.converged);
        for (xi, ci) in x.iter().zip(c) {
            assert!((xi - ci.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn newton_projection_respected() {
        // Root at x = -3 and x = 1; projection to [0, 10] must find x = 1.
        let mut x = vec![5.0];
        let info = damped_newton(
            &mut x,
            |x, f| f[0] = (x[0] - 1.0) * (x[0] + 3.0),
            |x| {
                let mut j = BandMatrix::zero(1, 0, 0);
                j.set(0, 0, 2.0 * x[0] + 2.0);
                j
            },
            |x| x[0] = x[0].clamp(0.0, 10.0),
            &NewtonOpts::default(),
        )
        .unwrap();
        assert!(info.converged);
        assert!((x[0] - 1.0).abs() < 1e-10);
    }
}
