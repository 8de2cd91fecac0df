//! Principal-eigenvalue machinery: the basic reproduction number of the
//! infection operator and the threshold/positivity structure of logistic
//! subdomain problems.
//!
//! The reproduction number is the largest `lambda` of the generalized
//! eigenproblem `(N/|Omega|)^q beta phi = lambda (-d_I Lap + gamma) phi`
//! under no-flux boundaries; the right-hand operator is positive definite, so
//! inverse-power iteration with the cell-weighted inner product converges to
//! the principal pair. The same iteration, on a subdomain whose outward faces
//! hold the value at zero, yields the onset threshold of the logistic
//! equation `Lap u + (beta/b)(a - u) u = 0`, which describes where infected
//! mass settles on highest-risk patches when susceptible motion is slow.

use crate::config::Scenario;
use crate::error::{Result, SimError};
use crate::grid::{inf_norm, neumaier_sum, Field, Grid};
use crate::linalg::BandMatrix;
use crate::solver::{damped_newton, illinois_root, NewtonInfo, NewtonOpts};

/// Principal eigenpair of `num . phi = lambda K phi` where `K` is an
/// assembled positive-definite band operator and `num` a nonnegative diagonal
/// (not identically zero). Inverse-power iteration: factor `K` once, repeat
/// `phi <- K^{-1}(num . phi)` with sup normalization, and read `lambda` off
/// the weighted Rayleigh quotient until its increments fall below `tol`
/// relative. Returns `(lambda, phi, iterations, residual)` with `phi`
/// normalized to unit max-norm and `residual = ||num.phi - lambda K phi||_oo`.
fn principal_pair(
    k: &BandMatrix,
    num: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(f64, Vec<f64>, usize, f64)> {
    let n = num.len();
    let lu = k.clone().lu_factor()?;
    let mut phi = vec![1.0; n];
    let mut lambda_prev = f64::NAN;
    for it in 1..=max_iters {
        let y: Vec<f64> = phi.iter().zip(num).map(|(&p, &c)| c * p).collect();
        let mut z = lu.solve(&y);
        let m = inf_norm(&z);
        if !(m > 0.0) || !m.is_finite() {
            return Err(SimError::numerics(
                "eigen iteration degenerated: the weighted image vanished",
            ));
        }
        for v in &mut z {
            *v /= m;
        }
        let kz = k.mul_vec(&z);
        let num_part = neumaier_sum(z.iter().zip(num).map(|(&v, &c)| c * v * v));
        let den_part = neumaier_sum(z.iter().zip(&kz).map(|(&v, &w)| v * w));
        if !(den_part > 0.0) {
            return Err(SimError::numerics(
                "eigen iteration left the positive-definite cone",
            ));
        }
        let lambda = num_part / den_part;
        phi = z;
        if (lambda - lambda_prev).abs() <= tol * lambda.abs().max(1.0) {
            let y: Vec<f64> = phi.iter().zip(num).map(|(&p, &c)| c * p).collect();
            let kphi = k.mul_vec(&phi);
            let residual =
                inf_norm(&y.iter().zip(&kphi).map(|(&a, &b)| a - lambda * b).collect::<Vec<_>>());
            return Ok((lambda, phi, it, residual));
        }
        lambda_prev = lambda;
    }
    Err(SimError::numerics(format!(
        "eigen iteration did not settle in {max_iters} steps (last lambda = {lambda_prev:.6e})"
    )))
}

/// Result of [`compute_r0`].
#[derive(Debug, Clone)]
pub struct R0Result {
    /// The reproduction number: discrete supremum of the Rayleigh quotient.
    pub value: f64,
    /// Principal eigenfunction, positive and normalized to unit max-norm.
    pub eigenfunction: Field,
    pub iterations: usize,
    /// Max-norm of the generalized eigen-residual at the returned pair.
    pub residual: f64,
}

/// Build the pencil of the reproduction-number eigenproblem: the definite
/// side `K = -d_i Lap + diag(gamma)` and the numerator weight
/// `(n_total/|Omega|)^q * beta` per node.
fn r0_pencil(
    grid: &Grid,
    beta: &Field,
    gamma: &Field,
    q: f64,
    d_i: f64,
    n_total: f64,
) -> Result<(BandMatrix, Vec<f64>)> {
    grid.check_field(beta)?;
    grid.check_field(gamma)?;
    if !(q > 0.0) || !(d_i > 0.0) || !(n_total > 0.0) {
        return Err(SimError::config(format!(
            "reproduction number needs q, d_i, n_total > 0 (got q = {q}, d_i = {d_i}, N = {n_total})"
        )));
    }
    for (k, (&b, &g)) in beta.values.iter().zip(&gamma.values).enumerate() {
        if !(b > 0.0) || !(g > 0.0) {
            return Err(SimError::config(format!(
                "transmission and recovery must be positive everywhere (node {k}: beta = {b}, gamma = {g})"
            )));
        }
    }
    let scale = (n_total / grid.measure_h()).powf(q);
    let k_mat = grid.assemble(-d_i, |i| gamma.values[i]);
    let num: Vec<f64> = beta.values.iter().map(|&b| scale * b).collect();
    Ok((k_mat, num))
}

/// Basic reproduction number for linear incidence (p = 1): the largest
/// eigenvalue of `(N/|Omega|)^q beta phi = lambda (-d_i Lap + gamma) phi`
/// with no-flux boundaries, by inverse-power iteration. For constant
/// coefficients the first quotient is already exact.
pub fn compute_r0(
    grid: &Grid,
    beta: &Field,
    gamma: &Field,
    p: f64,
    q: f64,
    d_i: f64,
    n_total: f64,
) -> Result<R0Result> {
    if p != 1.0 {
        return Err(SimError::Regime(format!(
            "the reproduction number is defined for linear incidence only (p = 1, got p = {p})"
        )));
    }
    let (k_mat, num) = r0_pencil(grid, beta, gamma, q, d_i, n_total)?;
    let (value, phi, iterations, residual) = principal_pair(&k_mat, &num, 1e-12, 1000)?;
    if phi.iter().any(|&v| !(v > 0.0)) {
        return Err(SimError::numerics(
            "principal eigenfunction lost positivity; the operator may be reducible",
        ));
    }
    Ok(R0Result { value, eigenfunction: Field::from_values(grid, phi), iterations, residual })
}

/// [`compute_r0`] with the grid, coefficients, and population taken from a
/// scenario; `d_i` is explicit because sweeps vary it.
pub fn scenario_r0(scen: &Scenario, d_i: f64) -> Result<R0Result> {
    compute_r0(
        &scen.grid,
        &scen.coef.beta,
        &scen.coef.gamma,
        scen.cfg.p,
        scen.cfg.q,
        d_i,
        scen.n_total,
    )
}

/// Discrete Rayleigh quotient of a candidate field for the same pencil:
/// `(N/|Omega|)^q int beta psi^2 / int (d_i |grad psi|^2 + gamma psi^2)`,
/// evaluated through the assembled operator so that the quotient of the
/// principal eigenfunction reproduces the reproduction number exactly.
pub fn rayleigh_quotient(
    grid: &Grid,
    beta: &Field,
    gamma: &Field,
    q: f64,
    d_i: f64,
    n_total: f64,
    psi: &[f64],
) -> Result<f64> {
    if psi.len() != grid.n_nodes() {
        return Err(SimError::config(format!(
            "candidate field has {} nodes, grid has {}",
            psi.len(),
            grid.n_nodes()
        )));
    }
    let (k_mat, num) = r0_pencil(grid, beta, gamma, q, d_i, n_total)?;
    let kpsi = k_mat.mul_vec(psi);
    let num_part = neumaier_sum(psi.iter().zip(&num).map(|(&v, &c)| c * v * v));
    let den_part = neumaier_sum(psi.iter().zip(&kpsi).map(|(&v, &w)| v * w));
    if !(den_part > 0.0) {
        return Err(SimError::config("candidate field has a nonpositive energy".to_string()));
    }
    Ok(num_part / den_part)
}

/// A subdomain of a parent grid together with its boundary policy: faces
/// toward excluded nodes always hold the value at zero (absorbing), while
/// faces on the outer domain boundary either keep the no-flux condition
/// (`outer_neumann = true`, the highest-risk-patch convention) or absorb as
/// well (`false`, a fully absorbing subdomain).
pub struct Patch<'a> {
    grid: &'a Grid,
    nodes: Vec<usize>,
    local_of: Vec<Option<usize>>,
    outer_neumann: bool,
    bandwidth: usize,
    has_dirichlet: bool,
}

impl<'a> Patch<'a> {
    /// Build a patch from the set of retained parent nodes.
    pub fn from_nodes(grid: &'a Grid, mut nodes: Vec<usize>, outer_neumann: bool) -> Result<Self> {
        nodes.sort_unstable();
        nodes.dedup();
        if nodes.is_empty() {
            return Err(SimError::config("a subdomain needs at least one node"));
        }
        if *nodes.last().unwrap() >= grid.n_nodes() {
            return Err(SimError::config(format!(
                "subdomain node {} is outside the grid (n = {})",
                nodes.last().unwrap(),
                grid.n_nodes()
            )));
        }
        let mut local_of = vec![None; grid.n_nodes()];
        for (l, &g) in nodes.iter().enumerate() {
            local_of[g] = Some(l);
        }
        let mut bandwidth = 1usize;
        let mut has_dirichlet = false;
        for (l, &g) in nodes.iter().enumerate() {
            for nb in grid.neighbors(g) {
                match nb {
                    Some(j) => match local_of[*j] {
                        Some(lj) => bandwidth = bandwidth.max(l.abs_diff(lj)),
                        None => has_dirichlet = true,
                    },
                    None => {
                        if !outer_neumann {
                            has_dirichlet = true;
                        }
                    }
                }
            }
        }
        Ok(Patch { grid, nodes, local_of, outer_neumann, bandwidth, has_dirichlet })
    }

    /// Build a patch from a nodal mask (true = retained).
    pub fn from_mask(grid: &'a Grid, mask: &[bool], outer_neumann: bool) -> Result<Self> {
        if mask.len() != grid.n_nodes() {
            return Err(SimError::config(format!(
                "mask has {} entries, grid has {} nodes",
                mask.len(),
                grid.n_nodes()
            )));
        }
        Self::from_nodes(
            grid,
            mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect(),
            outer_neumann,
        )
    }

    /// The whole grid as a patch. With `outer_neumann = false` every outer
    /// face absorbs (the classical zero-boundary subdomain); with `true`
    /// the patch has no absorbing faces at all.
    pub fn whole(grid: &'a Grid, outer_neumann: bool) -> Self {
        Self::from_nodes(grid, (0..grid.n_nodes()).collect(), outer_neumann)
            .expect("a built grid is nonempty")
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Parent indices of the retained nodes, ascending.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Whether any face holds the value at zero.
    pub fn has_absorbing_faces(&self) -> bool {
        self.has_dirichlet
    }

    /// Discrete measure of the patch (uniform cell weights).
    pub fn measure(&self) -> f64 {
        self.grid.weight * self.nodes.len() as f64
    }

    /// Compensated quadrature of a local field over the patch.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.nodes.len());
        self.grid.weight * neumaier_sum(u.iter().copied())
    }

    /// Restrict a parent-grid nodal vector to the patch.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&g| values[g]).collect()
    }

    /// Embed a local field into the parent grid, zero outside the patch.
    pub fn embed(&self, u: &[f64]) -> Field {
        debug_assert_eq!(u.len(), self.nodes.len());
        let mut values = vec![0.0; self.grid.n_nodes()];
        for (l, &g) in self.nodes.iter().enumerate() {
            values[g] = u[l];
        }
        Field::from_values(self.grid, values)
    }

    /// Row of the patch Laplacian in local indices: off-diagonals for
    /// in-patch neighbors, with absorbing faces folded into the diagonal via
    /// the ghost value 0 at the face center (a half-cell away, hence the
    /// factor 2).
    pub fn laplacian_row(&self, local: usize) -> Vec<(usize, f64)> {
        let ix2 = 1.0 / (self.grid.hx * self.grid.hx);
        let iy2 = 1.0 / (self.grid.hy * self.grid.hy);
        let coef = [ix2, ix2, iy2, iy2];
        let g = self.nodes[local];
        let mut row = Vec::with_capacity(5);
        let mut diag = 0.0;
        // Only the directions the grid actually has: on an interval the y
        // slots are absent for lack of a dimension, not because of a face.
        for d in 0..2 * self.grid.dim {
            match &self.grid.neighbors(g)[d] {
                Some(j) => match self.local_of[*j] {
                    Some(lj) => {
                        row.push((lj, coef[d]));
                        diag += coef[d];
                    }
                    None => diag += 2.0 * coef[d],
                },
                None => {
                    if !self.outer_neumann {
                        diag += 2.0 * coef[d];
                    }
                }
            }
        }
        row.push((local, -diag));
        row
    }

    /// Assemble `lap_coef * L + diag(d)` for the patch Laplacian `L`.
    pub fn assemble(&self, lap_coef: f64, d: impl Fn(usize) -> f64) -> BandMatrix {
        let n = self.nodes.len();
        let b = self.bandwidth.max(1);
        let mut a = BandMatrix::zero(n, b, b);
        for local in 0..n {
            for (j, v) in self.laplacian_row(local) {
                if j == local {
                    a.add(local, local, lap_coef * v + d(local));
                } else {
                    a.add(local, j, lap_coef * v);
                }
            }
        }
        a
    }

    /// Apply the patch Laplacian to a local field.
    pub fn apply_laplacian(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.nodes.len());
        debug_assert_eq!(out.len(), self.nodes.len());
        for local in 0..self.nodes.len() {
            let mut acc = 0.0;
            for (j, v) in self.laplacian_row(local) {
                acc += v * u[j];
            }
            out[local] = acc;
        }
    }
}

/// Split a nodal mask into connected components under the stencil adjacency.
/// Each component is a sorted list of parent node indices; components are
/// ordered by their smallest node.
pub fn connected_components(grid: &Grid, mask: &[bool]) -> Vec<Vec<usize>> {
    let n = grid.n_nodes();
    debug_assert_eq!(mask.len(), n);
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    for start in 0..n {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut queue = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(g) = queue.pop() {
            comp.push(g);
            for nb in grid.neighbors(g).iter().flatten() {
                if mask[*nb] && !seen[*nb] {
                    seen[*nb] = true;
                    queue.push(*nb);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// Solution of the logistic subdomain problem `Lap u + (beta/b)(a - u)u = 0`.
#[derive(Debug, Clone)]
pub struct KppResult {
    /// Solution embedded in the parent grid, zero outside the subdomain.
    pub u: Field,
    pub a: f64,
    pub b: f64,
    /// Onset threshold: positive solutions exist exactly for `a > a_low`.
    pub a_low: f64,
    /// Whether the returned solution is the positive branch.
    pub positive: bool,
    pub iterations: usize,
    /// Max-norm of the equation residual at the returned solution.
    pub residual: f64,
}

/// Onset threshold of the logistic subdomain problem: `a_low = b * mu_1`
/// where `mu_1` is the principal eigenvalue of `-Lap phi = mu beta phi` with
/// the patch boundary policy. Computed through the inverse pencil
/// `beta phi = nu (-Lap) phi` (largest `nu = 1/mu_1`), which is what the
/// inverse-power iteration naturally delivers. A patch without absorbing
/// faces has threshold zero.
pub fn kpp_threshold(b: f64, patch: &Patch, beta: &Field) -> Result<f64> {
    if !(b > 0.0) {
        return Err(SimError::config(format!("the damping scale b must be positive, got {b}")));
    }
    patch.grid.check_field(beta)?;
    if !patch.has_dirichlet {
        return Ok(0.0);
    }
    let beta_l = patch.restrict(&beta.values);
    if beta_l.iter().any(|&v| !(v > 0.0)) {
        return Err(SimError::config(
            "transmission must be positive on the subdomain".to_string(),
        ));
    }
    let k_mat = patch.assemble(-1.0, |_| 0.0);
    let (nu, _, _, _) = principal_pair(&k_mat, &beta_l, 1e-12, 1000)?;
    Ok(b / nu)
}

/// Inner Newton solve of the logistic problem in saturation units
/// `v = u / a`: `Lap v + c (1 - v) v = 0` with `c = a beta / b`, starting
/// from the supersolution `v = 1` (or a warm start) and clamped to [0, 1].
/// Returns the local solution in `u` units together with the Newton report
/// (residual also in `u` units).
fn logistic_on_patch(
    patch: &Patch,
    beta_l: &[f64],
    a: f64,
    b: f64,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, NewtonInfo)> {
    let n = patch.n_nodes();
    let c: Vec<f64> = beta_l.iter().map(|&bv| a * bv / b).collect();
    let c_max = c.iter().cloned().fold(0.0, f64::max);
    let h2 = patch.grid.h_min() * patch.grid.h_min();
    // Tolerance sits above the rounding floor of the stiffest term
    // (the Laplacian at unit amplitude) and of the reaction.
    let opts = NewtonOpts {
        tol: 1e-12 * (1.0 + c_max) + 1e-14 * 8.0 / h2,
        max_iters: 200,
        max_backtracks: 30,
    };
    let solve_from = |v: &mut Vec<f64>| -> Result<NewtonInfo> {
        let mut lap = vec![0.0; n];
        damped_newton(
            v,
            |v, out| {
                patch.apply_laplacian(v, &mut lap);
                for i in 0..n {
                    out[i] = lap[i] + c[i] * (1.0 - v[i]) * v[i];
                }
            },
            |v| patch.assemble(1.0, |i| c[i] * (1.0 - 2.0 * v[i])),
            |v| {
                for x in v.iter_mut() {
                    *x = x.clamp(0.0, 1.0);
                }
            },
            &opts,
        )
    };
    let mut v: Vec<f64> =
        warm.map(|w| w.iter().map(|&u| (u / a).clamp(0.0, 1.0)).collect())
            .unwrap_or_else(|| vec![1.0; n]);
    let mut info = solve_from(&mut v)?;
    if warm.is_some() && inf_norm(&v) <= 1e-10 {
        // The zero state solves the equation exactly, so a warm start inside
        // its Newton basin collapses onto it even when the positive (maximal)
        // solution exists. Descend from the supersolution to recover it.
        v = vec![1.0; n];
        info = solve_from(&mut v)?;
    }
    if !info.converged && info.residual > opts.tol.sqrt() {
        return Err(SimError::numerics(format!(
            "logistic solve stalled at residual {:.3e} (a = {a:.6e})",
            info.residual
        )));
    }
    let u: Vec<f64> = v.iter().map(|&x| a * x).collect();
    let mut report = info;
    report.residual *= a;
    Ok((u, report))
}

/// Stable nonnegative solution of `Lap u + (beta/b)(a - u)u = 0` on a
/// subdomain: zero on absorbing faces, no-flux where the subdomain meets the
/// outer boundary. Newton descends from the supersolution `u = a` to the
/// maximal (stable) solution; below the onset threshold that solution is
/// identically zero.
pub fn solve_fisher_kpp(a: f64, b: f64, patch: &Patch, beta: &Field) -> Result<KppResult> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(SimError::config(format!("logistic scales must be positive (a = {a}, b = {b})")));
    }
    let a_low = kpp_threshold(b, patch, beta)?;
    if a <= a_low {
        // The zero state is the unique stable solution; return it exactly.
        return Ok(KppResult {
            u: patch.embed(&vec![0.0; patch.n_nodes()]),
            a,
            b,
            a_low,
            positive: false,
            iterations: 0,
            residual: 0.0,
        });
    }
    let beta_l = patch.restrict(&beta.values);
    let (u, info) = logistic_on_patch(patch, &beta_l, a, b, None)?;
    let positive = inf_norm(&u) > 1e-10;
    Ok(KppResult {
        u: patch.embed(&u),
        a,
        b,
        a_low,
        positive,
        iterations: info.iterations,
        residual: info.residual,
    })
}

/// Amplitude selection across highest-risk patches: the shared constant
/// `a_hat` and per-patch profiles of [`solve_limit_patch`] /
/// [`solve_limit_patches`].
#[derive(Debug, Clone)]
pub struct PatchAmplitude {
    /// The shared amplitude selected by the mass constraint.
    pub a_hat: f64,
    /// Combined profile over the parent grid (patches are disjoint).
    pub i_hat: Field,
    /// Infected mass carried by each patch (zero below its threshold).
    pub patch_masses: Vec<f64>,
    /// Onset threshold of each patch.
    pub thresholds: Vec<f64>,
    /// Outer root-find evaluations.
    pub iterations: usize,
    /// Max equation residual across patches.
    pub residual: f64,
}

/// Distribute a prescribed infected mass across disjoint subdomains by the
/// logistic profiles `Lap I + (beta/b)(a_hat - I) I = 0`: one shared
/// amplitude `a_hat` is root-found so the summed patch masses meet
/// `mass_target`. Patches whose threshold exceeds `a_hat` carry zero mass.
/// The amplitude is capped at 1e6; a target still unreachable there is
/// reported as a regime error.
pub fn solve_limit_patches(
    patches: &[Patch],
    b: f64,
    beta: &Field,
    mass_target: f64,
) -> Result<PatchAmplitude> {
    if patches.is_empty() {
        return Err(SimError::config("at least one patch is required"));
    }
    if !(mass_target > 0.0) {
        return Err(SimError::Regime(format!(
            "the prescribed infected mass must be positive, got {mass_target:.6e}"
        )));
    }
    let grid = patches[0].grid;
    let mut claimed = vec![false; grid.n_nodes()];
    for p in patches {
        if !std::ptr::eq(p.grid, grid) {
            return Err(SimError::config("all patches must share one parent grid"));
        }
        for &g in p.nodes() {
            if claimed[g] {
                return Err(SimError::config(format!("patches overlap at node {g}")));
            }
            claimed[g] = true;
        }
    }
    let thresholds: Vec<f64> =
        patches.iter().map(|p| kpp_threshold(b, p, beta)).collect::<Result<_>>()?;
    let betas: Vec<Vec<f64>> = patches.iter().map(|p| p.restrict(&beta.values)).collect();

    let a_min = thresholds.iter().cloned().fold(f64::INFINITY, f64::min);
    let cap = 1e6;
    let mut warms: Vec<Option<Vec<f64>>> = vec![None; patches.len()];
    let mut evals = 0usize;
    let eval = |a: f64, warms: &mut Vec<Option<Vec<f64>>>| -> Result<f64> {
        let mut total = 0.0;
        for (j, p) in patches.iter().enumerate() {
            if a <= thresholds[j] {
                warms[j] = None;
                continue;
            }
            let (u, _) = logistic_on_patch(p, &betas[j], a, b, warms[j].as_deref())?;
            total += p.integrate(&u);
            warms[j] = Some(u);
        }
        Ok(total - mass_target)
    };

    // Bracket the amplitude: mass vanishes at the smallest threshold and
    // grows without bound, so double upward until the target is passed.
    let lo = a_min;
    let flo = -mass_target;
    let total_measure: f64 = patches.iter().map(|p| p.measure()).sum();
    let mut hi = (a_min + mass_target / total_measure).max(1e-6) * 2.0;
    let mut fhi;
    loop {
        fhi = eval(hi, &mut warms)?;
        evals += 1;
        if fhi >= 0.0 {
            break;
        }
        hi *= 2.0;
        if hi > cap {
            return Err(SimError::Regime(format!(
                "infected mass {mass_target:.6e} is unreachable below the amplitude cap {cap:.1e}"
            )));
        }
    }

    let (a_hat, _) = {
        let evals_cell = &mut evals;
        let warms_cell = &mut warms;
        illinois_root(
            |a| {
                *evals_cell += 1;
                eval(a, warms_cell)
            },
            lo,
            hi,
            flo,
            fhi,
            1e-12,
            1e-10 * mass_target.max(1.0),
            200,
        )?
    };

    // Final profiles at the selected amplitude.
    let mut values = vec![0.0; grid.n_nodes()];
    let mut patch_masses = vec![0.0; patches.len()];
    let mut residual = 0.0f64;
    for (j, p) in patches.iter().enumerate() {
        if a_hat <= thresholds[j] {
            continue;
        }
        let (u, info) = logistic_on_patch(p, &betas[j], a_hat, b, warms[j].as_deref())?;
        patch_masses[j] = p.integrate(&u);
        residual = residual.max(info.residual);
        for (l, &g) in p.nodes().iter().enumerate() {
            values[g] = u[l];
        }
    }
    Ok(PatchAmplitude {
        a_hat,
        i_hat: Field::from_values(grid, values),
        patch_masses,
        thresholds,
        iterations: evals,
        residual,
    })
}

/// Single-patch form of [`solve_limit_patches`].
pub fn solve_limit_patch(
    patch: &Patch,
    b: f64,
    beta: &Field,
    mass_target: f64,
) -> Result<PatchAmplitude> {
    solve_limit_patches(std::slice::from_ref(patch), b, beta, mass_target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    struct Owned {
        grid: Grid,
        beta: Vec<f64>,
        gamma: Vec<f64>,
    }

    impl Owned {
        fn interval(n: usize, beta: impl Fn(f64) -> f64, gamma: impl Fn(f64) -> f64) -> Self {
            let grid = Grid::build(&DomainSpec::Interval { length: 1.0, n }).unwrap();
            let beta = (0..grid.n_nodes()).map(|i| beta(grid.coords(i).0)).collect();
            let gamma = (0..grid.n_nodes()).map(|i| gamma(grid.coords(i).0)).collect();
            Owned { grid, beta, gamma }
        }

        fn beta_field(&self) -> Field {
            Field::from_values(&self.grid, self.beta.clone())
        }

        fn gamma_field(&self) -> Field {
            Field::from_values(&self.grid, self.gamma.clone())
        }
    }

    #[test]
    fn constant_coefficients_give_the_closed_form_value() {
        let f = Owned::interval(33, |_| 2.0, |_| 1.0);
        let r0 = compute_r0(&f.grid, &f.beta_field(), &f.gamma_field(), 1.0, 1.0, 0.37, 1.0)
            .unwrap();
        assert!((r0.value - 2.0).abs() < 1e-12, "R0 = {}", r0.value);
        assert!(r0.eigenfunction.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        // Mean density 4, q = 1/2: the scale factor is 2.
        let r0 = compute_r0(&f.grid, &f.beta_field(), &f.gamma_field(), 1.0, 0.5, 1.0, 4.0)
            .unwrap();
        assert!((r0.value - 4.0).abs() < 1e-12, "R0 = {}", r0.value);
    }

    #[test]
    fn sublinear_incidence_is_rejected() {
        let f = Owned::interval(17, |_| 1.0, |_| 1.0);
        let err = compute_r0(&f.grid, &f.beta_field(), &f.gamma_field(), 0.5, 1.0, 1.0, 1.0)
            .unwrap_err();
        assert!(matches!(err, SimError::Regime(_)));
    }

    #[test]
    fn reproduction_number_decreases_with_infected_motion() {
        // n = 129 resolves the boundary layer of the small-motion
        // eigenfunction, whose width is about (3 d_i / 2)^{1/3} = 0.05.
        let f = Owned::interval(129, |x| 1.0 + 2.0 * x, |_| 1.0);
        let values: Vec<f64> = [1e-2, 1e-1, 1.0, 10.0]
            .iter()
            .map(|&d| {
                compute_r0(&f.grid, &f.beta_field(), &f.gamma_field(), 1.0, 1.0, d, 1.0)
                    .unwrap()
                    .value
            })
            .collect();
        for pair in values.windows(2) {
            assert!(pair[0] > pair[1], "not strictly decreasing: {values:?}");
        }

        // Small-motion limit: sup beta/gamma = 3 (up to the half-cell offset
        // of the max of the linear profile).
        let small = compute_r0(&f.grid, &f.beta_field(), &f.gamma_field(), 1.0, 1.0, 1e-4, 1.0)
            .unwrap()
            .value;
        assert!((small - 3.0).abs() < 0.05 * 3.0, "small-motion R0 = {small}");

        // Large-motion limit: int beta / int gamma = 2.
        let large = compute_r0(&f.grid, &f.beta_field(), &f.gamma_field(), 1.0, 1.0, 1e3, 1.0)
            .unwrap()
            .value;
        assert!((large - 2.0).abs() < 0.02 * 2.0, "large-motion R0 = {large}");
    }

    #[test]
    fn no_candidate_beats_the_reproduction_number() {
        let f = Owned::interval(41, |x| 1.5 + (3.0 * x).sin().abs(), |x| 1.0 + 0.5 * x);
        let beta = f.beta_field();
        let gamma = f.gamma_field();
        let r0 = compute_r0(&f.grid, &beta, &gamma, 1.0, 1.0, 0.2, 1.3).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let psi: Vec<f64> = (0..f.grid.n_nodes()).map(|_| rng.gen_range(0.05..1.0)).collect();
            let q = rayleigh_quotient(&f.grid, &beta, &gamma, 1.0, 0.2, 1.3, &psi).unwrap();
            assert!(q <= r0.value + 1e-8, "quotient {q} exceeds R0 {}", r0.value);
        }
        // The eigenfunction itself attains the supremum.
        let q = rayleigh_quotient(
            &f.grid,
            &beta,
            &gamma,
            1.0,
            0.2,
            1.3,
            &r0.eigenfunction.values,
        )
        .unwrap();
        assert!((q - r0.value).abs() <= 1e-10 * r0.value);
    }

    #[test]
    fn absorbing_thresholds_match_the_known_eigenvalues() {
        // Interval (0,1), unit transmission: principal absorbing eigenvalue
        // pi^2 (discrete value 4 n^2 sin^2(pi / 2n)).
        let f = Owned::interval(65, |_| 1.0, |_| 1.0);
        let patch = Patch::whole(&f.grid, false);
        let a_low = kpp_threshold(1.0, &patch, &f.beta_field()).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((a_low - pi2).abs() < 0.01 * pi2, "interval threshold {a_low}");

        // Linearity in b.
        let doubled = kpp_threshold(2.0, &patch, &f.beta_field()).unwrap();
        assert!((doubled - 2.0 * a_low).abs() < 1e-10 * a_low);

        // Unit square: 2 pi^2.
        let grid =
            Grid::build(&DomainSpec::Rectangle { lx: 1.0, ly: 1.0, nx: 33, ny: 33 }).unwrap();
        let beta = Field::constant(&grid, 1.0);
        let patch = Patch::whole(&grid, false);
        let a_low = kpp_threshold(1.0, &patch, &beta).unwrap();
        assert!((a_low - 2.0 * pi2).abs() < 0.01 * 2.0 * pi2, "square threshold {a_low}");
    }

    #[test]
    fn logistic_solutions_grow_with_the_amplitude() {
        let f = Owned::interval(65, |_| 1.0, |_| 1.0);
        let beta = f.beta_field();
        let patch = Patch::whole(&f.grid, false);
        let a_low = kpp_threshold(1.0, &patch, &beta).unwrap();

        // Below threshold: the zero branch, flagged accordingly.
        let below = solve_fisher_kpp(0.9 * a_low, 1.0, &patch, &beta).unwrap();
        assert!(!below.positive);
        assert_eq!(below.u.inf_norm(), 0.0);

        // Above threshold: positive, bounded by a, monotone in a.
        let mut prev: Option<Vec<f64>> = None;
        for mult in [1.5, 2.0, 4.0, 7.0, 10.0] {
            let a = mult * a_low;
            let res = solve_fisher_kpp(a, 1.0, &patch, &beta).unwrap();
            assert!(res.positive, "a = {a}");
            let interior_max = res.u.inf_norm();
            assert!(interior_max > 0.0 && interior_max < a, "max {interior_max} vs a {a}");
            if let Some(p) = &prev {
                for (new, old) in res.u.values.iter().zip(p) {
                    assert!(new + 1e-9 >= *old, "not monotone in a at mult {mult}");
                }
            }
            prev = Some(res.u.values.clone());
        }
    }

    #[test]
    fn patch_amplitude_meets_the_mass_target() {
        // All-Neumann whole-domain patch: the profile is flat and the
        // amplitude is exactly target / |Omega|.
        let f = Owned::interval(33, |_| 1.0, |_| 1.0);
        let beta = f.beta_field();
        let whole = Patch::whole(&f.grid, true);
        let out = solve_limit_patch(&whole, 0.7, &beta, 0.42).unwrap();
        let omega = f.grid.measure_h();
        assert!((out.a_hat - 0.42 / omega).abs() < 1e-12 * (0.42 / omega));
        for &v in &out.i_hat.values {
            assert!((v - out.a_hat).abs() < 1e-12);
        }
        assert!((out.patch_masses[0] - 0.42).abs() < 1e-10);

        // A strict subinterval with absorbing interfaces: the mass matches
        // the target to the root-find tolerance and the amplitude sits above
        // the patch threshold.
        let nodes: Vec<usize> =
            (0..f.grid.n_nodes()).filter(|&i| f.grid.coords(i).0 < 0.5).collect();
        let patch = Patch::from_nodes(&f.grid, nodes, true).unwrap();
        let target = 0.3;
        let out = solve_limit_patch(&patch, 1.0, &beta, target).unwrap();
        let mass: f64 = out.patch_masses.iter().sum();
        assert!((mass - target).abs() < 1e-8 * target, "mass {mass}");
        assert!(out.a_hat > out.thresholds[0]);
        assert!(out.residual < 1e-6);

        // Small target: the amplitude slides down toward the threshold.
        let small = solve_limit_patch(&patch, 1.0, &beta, 1e-3).unwrap();
        assert!(
            (small.a_hat - small.thresholds[0]).abs() < 0.05 * small.thresholds[0],
            "a_hat {} vs threshold {}",
            small.a_hat,
            small.thresholds[0]
        );
    }

    #[test]
    fn components_split_disjoint_boxes() {
        let grid =
            Grid::build(&DomainSpec::Rectangle { lx: 1.0, ly: 1.0, nx: 16, ny: 16 }).unwrap();
        let mask: Vec<bool> = (0..grid.n_nodes())
            .map(|i| {
                let (x, y) = grid.coords(i);
                // The rectangle is centered at the origin.
                (x < -0.2 && y < -0.2) || (x > 0.2 && y > 0.2)
            })
            .collect();
        let comps = connected_components(&grid, &mask);
        assert_eq!(comps.len(), 2);
        let total: usize = comps.iter().map(|c| c.len()).sum();
        assert_eq!(total, mask.iter().filter(|&&m| m).count());

        // Feed them through the multi-patch amplitude selection.
        let beta = Field::constant(&grid, 1.0);
        let patches: Vec<Patch> = comps
            .into_iter()
            .map(|c| Patch::from_nodes(&grid, c, true).unwrap())
            .collect();
        let out = solve_limit_patches(&patches, 1.0, &beta, 0.2).unwrap();
        let mass: f64 = out.patch_masses.iter().sum();
        assert!((mass - 0.2).abs() < 1e-8 * 0.2);
        // Symmetric corner boxes carry equal shares.
        assert!((out.patch_masses[0] - out.patch_masses[1]).abs() < 1e-8);
    }
}
