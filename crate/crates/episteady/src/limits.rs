//! Limit profiles of the endemic equilibrium for small diffusion.
//!
//! When one (or both) of the diffusion rates tends to zero, the equilibrium
//! approaches profiles that are governed by scalar equations or by a single
//! auxiliary elliptic problem. This module constructs those profiles on the
//! grid so that sweeps can measure how fast computed equilibria approach them:
//!
//! * small infected diffusion (`d_I -> 0`): constant susceptible level; for
//!   sublinear incidence (`p < 1`) the infected profile is explicit, for
//!   linear incidence (`p = 1`) the infected mass concentrates on the set
//!   where the risk ratio `r = gamma / beta` is minimal;
//! * small susceptible diffusion (`d_S -> 0`, `p = 1`): two regimes split by
//!   the total mass `N` against `∫ r^{1/q}` — an explicit profile for large
//!   `N`, and for small `N` a nonlocal problem whose solution gives the
//!   limiting susceptible shape while the infected density vanishes linearly
//!   in `d_S`;
//! * joint limit at a fixed ratio `sigma = d_I / d_S`: piecewise profiles
//!   driven by one scalar `kappa` determined by mass balance.
//!
//! All scalar unknowns are solved to near machine precision and reported with
//! the residual of their defining equation.

use crate::config::Scenario;
use crate::error::{Result, SimError};
use crate::fields::RiskData;
use crate::grid::{inf_norm, Field, Grid};
use crate::solver::{solve_increasing, solve_semilinear, NewtonOpts};

/// Everything the limit-profile constructions need, borrowed from a scenario
/// or assembled by hand in tests.
pub struct LimitInput<'a> {
    pub grid: &'a Grid,
    pub beta: &'a [f64],
    pub gamma: &'a [f64],
    pub risk: &'a RiskData,
    pub p: f64,
    pub q: f64,
    pub n_total: f64,
    /// Infected diffusion rate; only the nonlocal small-`d_S` problem uses it.
    pub d_i: f64,
}

impl<'a> LimitInput<'a> {
    pub fn from_scenario(scen: &'a Scenario) -> LimitInput<'a> {
        LimitInput {
            grid: &scen.grid,
            beta: &scen.coef.beta.values,
            gamma: &scen.coef.gamma.values,
            risk: &scen.coef.risk,
            p: scen.cfg.p,
            q: scen.cfg.q,
            n_total: scen.n_total,
            d_i: scen.cfg.d_i,
        }
    }

    fn omega(&self) -> f64 {
        self.grid.measure_h()
    }

    /// Nodal values of r^{1/q}.
    fn r_pow_inv_q(&self) -> Vec<f64> {
        self.risk.r_pow(self.grid, 1.0 / self.q).values
    }

    fn int_r_pow_inv_q(&self) -> f64 {
        self.grid.integrate(&self.r_pow_inv_q())
    }
}

/// Which limit a profile describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    /// `d_I -> 0`, p = 1: constant susceptible level, infected mass
    /// concentrating on the minimal-risk set.
    SmallDiLinear,
    /// `d_I -> 0`, p < 1: constant susceptible level with an explicit
    /// infected profile.
    SmallDiSublinear,
    /// `d_S -> 0`, p = 1, N > ∫ r^{1/q}: susceptibles follow r^{1/q},
    /// infected density constant.
    SmallDsLargePopulation,
    /// `d_S -> 0`, p = 1, N < ∫ r^{1/q}: infected density vanishes, the
    /// susceptible shape solves a nonlocal problem.
    SmallDsSmallPopulation,
    /// `d_S -> 0`, p < 1: constant infected level with an explicit
    /// susceptible profile.
    SmallDsSublinear,
    /// Joint limit at fixed sigma = d_I / d_S, p = 1.
    JointLinear,
    /// Joint limit at fixed sigma = d_I / d_S, p < 1.
    JointSublinear,
}

/// A limit profile on the grid together with the scalar unknown that pins it
/// down and the residual of that scalar's defining equation.
#[derive(Debug, Clone)]
pub struct LimitProfile {
    pub kind: LimitKind,
    pub s: Field,
    pub i: Field,
    /// The profile's principal scalar (susceptible or infected level, or the
    /// mass-balance kappa, or the nonlocal problem's susceptible mass).
    pub scalar: f64,
    /// Residual of the scalar equation that determines `scalar`.
    pub scalar_residual: f64,
    /// Total infected mass of the profile.
    pub infected_mass: f64,
}

fn check_exponents(p: f64, q: f64, want_sublinear: bool) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) || !(q > 0.0) {
        return Err(SimError::config(format!("exponents out of range: p = {p}, q = {q}")));
    }
    if want_sublinear && p == 1.0 {
        return Err(SimError::Regime(
            "this limit profile is defined for sublinear incidence (p < 1) only".into(),
        ));
    }
    Ok(())
}

/// Solves `u + r_floor^{-1/(1-p)} u^{q/(1-p)} = target` for u > 0. This is
/// the lower bound for the susceptible level `kappa / d_S` when p < 1 and
/// `d_S >= d_I`; `target` is the mean density N / |Omega|.
pub fn n_star(r_min: f64, p: f64, q: f64, target: f64) -> Result<f64> {
    check_exponents(p, q, true)?;
    if !(r_min > 0.0) || !(target > 0.0) {
        return Err(SimError::config(format!(
            "n_star needs positive inputs (r_min = {r_min}, target = {target})"
        )));
    }
    let e = q / (1.0 - p);
    let c = r_min.powf(-1.0 / (1.0 - p));
    solve_increasing(|s| Ok(s + c * s.powf(e)), target, 0.5 * target, 1e12, 1e-14)
}

/// Solves `m + (r_ceil m^{1-p})^{1/q} = target` for m > 0. This is the lower
/// bound for the infected level `kappa / d_I` when p < 1 and `d_S <= d_I`;
/// `target` is the mean density N / |Omega|.
pub fn m_star(r_max: f64, p: f64, q: f64, target: f64) -> Result<f64> {
    check_exponents(p, q, true)?;
    if !(r_max > 0.0) || !(target > 0.0) {
        return Err(SimError::config(format!(
            "m_star needs positive inputs (r_max = {r_max}, target = {target})"
        )));
    }
    let e = (1.0 - p) / q;
    let c = r_max.powf(1.0 / q);
    solve_increasing(|m| Ok(m + c * m.powf(e)), target, 0.5 * target, 1e12, 1e-14)
}

/// Constant susceptible level of the small-`d_I` limit for p < 1: solves
/// `N = ∫ [s + (s^q / r)^{1/(1-p)}] dx`. Returns the level and the equation
/// residual at it.
pub fn s_star(input: &LimitInput) -> Result<(f64, f64)> {
    check_exponents(input.p, input.q, true)?;
    let e = input.q / (1.0 - input.p);
    let inv = 1.0 / (1.0 - input.p);
    let weights: Vec<f64> = input.risk.r.values.iter().map(|&r| r.powf(-inv)).collect();
    let c = input.grid.integrate(&weights);
    let omega = input.omega();
    let g = |s: f64| Ok(s * omega + s.powf(e) * c);
    let s = solve_increasing(g, input.n_total, 0.5 * input.n_total / omega, 1e12, 1e-14)?;
    Ok((s, s * omega + s.powf(e) * c - input.n_total))
}

/// Constant infected level of the small-`d_S` limit for p < 1: solves
/// `N = ∫ [(r t^{1-p})^{1/q} + t] dx`. Returns the level and the equation
/// residual at it.
pub fn i_star(input: &LimitInput) -> Result<(f64, f64)> {
    check_exponents(input.p, input.q, true)?;
    let e = (1.0 - input.p) / input.q;
    let c = input.int_r_pow_inv_q();
    let omega = input.omega();
    let g = |t: f64| Ok(t * omega + t.powf(e) * c);
    let t = solve_increasing(g, input.n_total, 0.5 * input.n_total / omega, 1e12, 1e-14)?;
    Ok((t, t * omega + t.powf(e) * c - input.n_total))
}

/// Limit profile as the infected diffusion rate tends to zero.
///
/// For p = 1 the infected mass concentrates on the minimal-risk set and has
/// no pointwise density; the returned `i` spreads that mass uniformly over
/// the risk set as a plotting surrogate, and comparisons should use
/// `infected_mass` and a concentration metric instead of nodal values.
pub fn small_di_profile(input: &LimitInput) -> Result<LimitProfile> {
    check_exponents(input.p, input.q, false)?;
    let grid = input.grid;
    if input.p == 1.0 {
        let level = input.risk.r_min.powf(1.0 / input.q);
        let omega = input.omega();
        let mass = input.n_total - level * omega;
        if mass <= 0.0 {
            return Err(SimError::NoEndemicEquilibrium(format!(
                "total mass N = {:.6} does not exceed the minimal susceptible load {:.6}",
                input.n_total,
                level * omega
            )));
        }
        let risk_measure = input.risk.risk_measure(grid);
        let density = mass / risk_measure;
        let i = Field::from_values(
            grid,
            input
                .risk
                .risk_mask
                .iter()
                .map(|&inside| if inside { density } else { 0.0 })
                .collect(),
        );
        Ok(LimitProfile {
            kind: LimitKind::SmallDiLinear,
            s: Field::constant(grid, level),
            i,
            scalar: level,
            scalar_residual: 0.0,
            infected_mass: mass,
        })
    } else {
        let (level, residual) = s_star(input)?;
        let inv = 1.0 / (1.0 - input.p);
        let i = Field::from_values(
            grid,
            input
                .risk
                .r
                .values
                .iter()
                .map(|&r| (level.powf(input.q) / r).powf(inv))
                .collect(),
        );
        let infected_mass = grid.integrate(&i.values);
        Ok(LimitProfile {
            kind: LimitKind::SmallDiSublinear,
            s: Field::constant(grid, level),
            i,
            scalar: level,
            scalar_residual: residual,
            infected_mass,
        })
    }
}

/// Candidate limit profiles as the susceptible diffusion rate tends to zero.
///
/// For p < 1 there is a single profile. For p = 1 the regime is decided by
/// the sign of `N - ∫ r^{1/q}`; within a relative tie tolerance of 1e-9 both
/// candidates are returned and callers should report the distance to each.
pub fn small_ds_profiles(input: &LimitInput) -> Result<Vec<LimitProfile>> {
    check_exponents(input.p, input.q, false)?;
    if input.p < 1.0 {
        let (level, residual) = i_star(input)?;
        let rq = input.r_pow_inv_q();
        let e = (1.0 - input.p) / input.q;
        let s = Field::from_values(
            input.grid,
            rq.iter().map(|&v| v * level.powf(e)).collect(),
        );
        let i = Field::constant(input.grid, level);
        let infected_mass = input.grid.integrate(&i.values);
        return Ok(vec![LimitProfile {
            kind: LimitKind::SmallDsSublinear,
            s,
            i,
            scalar: level,
            scalar_residual: residual,
            infected_mass,
        }]);
    }
    let int_rq = input.int_r_pow_inv_q();
    let diff = input.n_total - int_rq;
    let tie_tol = 1e-9 * (input.n_total.abs() + int_rq.abs());
    let mut out = Vec::new();
    if diff >= -tie_tol {
        out.push(small_ds_large_population(input, int_rq));
    }
    if diff <= tie_tol {
        match small_ds_nonlocal(input) {
            Ok(nl) => out.push(nl.profile),
            // At an exact tie the nonlocal shape can degenerate; keep the
            // explicit candidate alone in that case.
            Err(SimError::NoEndemicEquilibrium(_)) if !out.is_empty() => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn small_ds_large_population(input: &LimitInput, int_rq: f64) -> LimitProfile {
    let rq = input.r_pow_inv_q();
    let omega = input.omega();
    let c = ((input.n_total - int_rq) / omega).max(0.0);
    let s = Field::from_values(input.grid, rq);
    let i = Field::constant(input.grid, c);
    let total = input.grid.integrate(&s.values) + c * omega;
    LimitProfile {
        kind: LimitKind::SmallDsLargePopulation,
        s,
        i,
        scalar: c,
        scalar_residual: total - input.n_total,
        infected_mass: c * omega,
    }
}

/// Result of the nonlocal small-`d_S` problem (p = 1, N < ∫ r^{1/q}).
#[derive(Debug, Clone)]
pub struct NonlocalLimit {
    /// The limiting profile: susceptible shape `S* = N (1 - v) / ∫ (1 - v)`,
    /// infected density identically zero (it vanishes linearly in `d_S`).
    pub profile: LimitProfile,
    /// Auxiliary shape `v` in [0, 1): the infected fraction of the conserved
    /// combination, solving
    /// `d_I (L v) + beta ((N/m)^q (1 - v)^q - r) v = 0` with `m = ∫ (1 - v)`.
    pub v: Field,
    /// Susceptible mass `m = ∫ (1 - v)` at the fixed point.
    pub m: f64,
    /// Max-norm residual of the v-equation at the returned iterate.
    pub pde_residual: f64,
    /// Consistency gap `|∫ (1 - v) - m|` at exit.
    pub fixed_point_residual: f64,
    pub fixed_point_iterations: usize,
}

/// Solve the nonlocal problem behind the small-`d_S`, small-population limit
/// for p = 1 by the monotone fixed-point iteration `m <- ∫ (1 - v(m))`
/// started from `m = |Omega|`, which selects the maximal solution branch.
/// Reports `NoEndemicEquilibrium` when the branch degenerates (v collapses to
/// zero, or the susceptible mass vanishes).
pub fn small_ds_nonlocal(input: &LimitInput) -> Result<NonlocalLimit> {
    check_exponents(input.p, input.q, false)?;
    if input.p != 1.0 {
        return Err(SimError::Regime(
            "the nonlocal small-d_S problem is defined for linear incidence (p = 1)".into(),
        ));
    }
    if !(input.d_i > 0.0) {
        return Err(SimError::config("the nonlocal problem needs d_I > 0"));
    }
    let grid = input.grid;
    let n = grid.n_nodes();
    let omega = input.omega();
    let nt = input.n_total;
    let q = input.q;
    let r = &input.risk.r.values;
    let opts = NewtonOpts { tol: 1e-13, max_iters: 80, max_backtracks: 30 };
    let lap_mag = 4.0 / (grid.hx * grid.hx)
        + if grid.dim == 2 { 4.0 / (grid.hy * grid.hy) } else { 0.0 };
    let beta_max = inf_norm(input.beta);
    let r_max = input.risk.r_max;

    let scalar_start = |m: f64| -> Vec<f64> {
        // Ignoring diffusion, the positive balance is (1-v)^q = r (m/N)^q.
        (0..n)
            .map(|i| (1.0 - r[i].powf(1.0 / q) * m / nt).clamp(0.0, 1.0 - 1e-9))
            .collect()
    };

    let solve_v = |m: f64, start: Vec<f64>| -> Result<(Vec<f64>, f64)> {
        let b_m = (nt / m).powf(q);
        let (v, mut info) = solve_semilinear(
            grid,
            input.d_i,
            |i, v| input.beta[i] * (b_m * (1.0 - v).powf(q) - r[i]) * v,
            |i, v| {
                input.beta[i]
                    * (b_m * ((1.0 - v).powf(q) - q * (1.0 - v).powf(q - 1.0) * v) - r[i])
            },
            (0.0, 1.0 - 1e-12),
            start,
            &opts,
        )?;
        if !info.converged {
            // A Newton stall below the representable size of the operator's
            // terms at the final iterate is convergence, not failure.
            let vmax = inf_norm(&v);
            let term_mag = input.d_i * lap_mag * vmax + beta_max * (b_m + r_max) * vmax;
            if info.residual <= opts.tol.max(32.0 * f64::EPSILON * term_mag) {
                info.converged = true;
            }
        }
        if !info.converged {
            return Err(SimError::numerics(format!(
                "nonlocal shape solve stalled at residual {:.3e} (m = {m:.6})",
                info.residual
            )));
        }
        Ok((v, info.residual))
    };

    let mut m = omega;
    let start = scalar_start(m);
    if inf_norm(&start) == 0.0 {
        return Err(SimError::NoEndemicEquilibrium(
            "the nonlocal shape is identically zero: risk exceeds the mean density everywhere"
                .into(),
        ));
    }
    let (mut v, _) = solve_v(m, start)?;
    if inf_norm(&v) < 1e-10 {
        return Err(SimError::NoEndemicEquilibrium(
            "the nonlocal problem admits only the zero shape at full susceptible mass".into(),
        ));
    }
    let one_minus = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| 1.0 - x).collect() };
    let mut m_new = grid.integrate(&one_minus(&v));
    let tol = 1e-12 * omega;
    let mut iterations = 1;
    let mut history: Vec<f64> = vec![m, m_new];
    while (m_new - m).abs() > tol && iterations < 400 {
        m = m_new;
        if m < 1e-6 * omega {
            return Err(SimError::NoEndemicEquilibrium(
                "susceptible mass of the nonlocal shape collapsed to zero".into(),
            ));
        }
        let (v_next, _) = solve_v(m, v.clone())?;
        if inf_norm(&v_next) < 1e-10 {
            return Err(SimError::NoEndemicEquilibrium(
                "the nonlocal shape collapsed to zero during the fixed-point iteration".into(),
            ));
        }
        v = v_next;
        m_new = grid.integrate(&one_minus(&v));
        iterations += 1;
        history.push(m_new);
        // Aitken extrapolation every few steps to speed up a slow linear tail.
        if history.len() >= 3 && iterations % 4 == 0 {
            let k = history.len();
            let (a, b, c) = (history[k - 3], history[k - 2], history[k - 1]);
            let denom = c - 2.0 * b + a;
            if denom.abs() > 1e-300 {
                let acc = a - (b - a) * (b - a) / denom;
                if acc.is_finite() && acc > 1e-6 * omega && acc <= omega && (acc - c).abs() < (b - a).abs() {
                    m_new = acc;
                    history.push(acc);
                }
            }
        }
    }
    if (m_new - m).abs() > tol {
        return Err(SimError::numerics(format!(
            "nonlocal fixed point did not settle: |delta m| = {:.3e} after {iterations} rounds",
            (m_new - m).abs()
        )));
    }
    // One final solve at the settled mass so v and m are consistent.
    let (v_fin, res_fin) = solve_v(m_new, v)?;
    let m_fin = grid.integrate(&one_minus(&v_fin));
    let s_values: Vec<f64> = v_fin.iter().map(|&x| nt * (1.0 - x) / m_fin).collect();
    let profile = LimitProfile {
        kind: LimitKind::SmallDsSmallPopulation,
        s: Field::from_values(grid, s_values),
        i: Field::constant(grid, 0.0),
        scalar: m_fin,
        scalar_residual: m_fin - m_new,
        infected_mass: 0.0,
    };
    Ok(NonlocalLimit {
        profile,
        v: Field::from_values(grid, v_fin),
        m: m_fin,
        pde_residual: res_fin,
        fixed_point_residual: (m_fin - m_new).abs(),
        fixed_point_iterations: iterations,
    })
}

/// Joint limit profile at a fixed diffusion ratio `sigma = d_I / d_S`.
pub fn joint_profile(input: &LimitInput, sigma: f64) -> Result<LimitProfile> {
    check_exponents(input.p, input.q, false)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SimError::config(format!("sigma must be positive and finite, got {sigma}")));
    }
    if input.p == 1.0 {
        joint_linear(input, sigma)
    } else {
        joint_sublinear(input, sigma)
    }
}

fn joint_linear(input: &LimitInput, sigma: f64) -> Result<LimitProfile> {
    let grid = input.grid;
    let rq = input.r_pow_inv_q();
    let omega = input.omega();
    let floor = input.risk.r_min.powf(1.0 / input.q);
    if input.n_total <= floor * omega {
        return Err(SimError::NoEndemicEquilibrium(format!(
            "total mass N = {:.6} does not exceed the minimal susceptible load {:.6}",
            input.n_total,
            floor * omega
        )));
    }
    let mass_of = |kappa: f64| -> f64 {
        let totals: Vec<f64> = rq
            .iter()
            .map(|&rv| kappa.min(rv) + (kappa - rv).max(0.0) / sigma)
            .collect();
        grid.integrate(&totals)
    };
    let kappa = solve_increasing(|k| Ok(mass_of(k)), input.n_total, floor, 1e12, 1e-14)?;
    let residual = mass_of(kappa) - input.n_total;
    let s = Field::from_values(grid, rq.iter().map(|&rv| kappa.min(rv)).collect());
    let i = Field::from_values(grid, rq.iter().map(|&rv| (kappa - rv).max(0.0) / sigma).collect());
    let infected_mass = grid.integrate(&i.values);
    Ok(LimitProfile { kind: LimitKind::JointLinear, s, i, scalar: kappa, scalar_residual: residual, infected_mass })
}

/// Per-node infected level of the sublinear joint profile: the root of
/// `sigma t + (r t^{1-p})^{1/q} = kappa` in (0, kappa/sigma), by bisection.
fn joint_node_infected(r: f64, p: f64, q: f64, sigma: f64, kappa: f64) -> f64 {
    let e = (1.0 - p) / q;
    let c = r.powf(1.0 / q);
    let g = |t: f64| sigma * t + c * t.powf(e) - kappa;
    let mut lo = 0.0;
    let mut hi = kappa / sigma;
    if g(hi) < 0.0 {
        return hi; // cannot happen for e > 0; guards rounding
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn joint_sublinear(input: &LimitInput, sigma: f64) -> Result<LimitProfile> {
    let grid = input.grid;
    let r = &input.risk.r.values;
    let (p, q) = (input.p, input.q);
    let e = (1.0 - p) / q;
    let infected_at = |kappa: f64| -> Vec<f64> {
        r.iter().map(|&rv| joint_node_infected(rv, p, q, sigma, kappa)).collect()
    };
    let mass_of = |kappa: f64| -> f64 {
        let inf = infected_at(kappa);
        let totals: Vec<f64> =
            inf.iter().zip(r).map(|(&t, &rv)| rv.powf(1.0 / q) * t.powf(e) + t).collect();
        grid.integrate(&totals)
    };
    let x0 = input.n_total / input.omega() * sigma.min(1.0);
    let kappa = solve_increasing(|k| Ok(mass_of(k)), input.n_total, x0, 1e12, 1e-14)?;
    let residual = mass_of(kappa) - input.n_total;
    let i_values = infected_at(kappa);
    // The susceptible level is the exact complement kappa - sigma * I.
    let s_values: Vec<f64> = i_values.iter().map(|&t| kappa - sigma * t).collect();
    let infected_mass = grid.integrate(&i_values);
    Ok(LimitProfile {
        kind: LimitKind::JointSublinear,
        s: Field::from_values(grid, s_values),
        i: Field::from_values(grid, i_values),
        scalar: kappa,
        scalar_residual: residual,
        infected_mass,
    })
}

/// The `sigma -> infinity` cap of the joint-limit kappa for p = 1: solves
/// `∫ min(kappa, r^{1/q}) = N`, which requires `N < ∫ r^{1/q}`.
pub fn joint_kappa_infinity(input: &LimitInput) -> Result<f64> {
    check_exponents(input.p, input.q, false)?;
    let int_rq = input.int_r_pow_inv_q();
    if input.n_total >= int_rq {
        return Err(SimError::Regime(format!(
            "the capped mass equation has no root: N = {:.6} >= ∫ r^{{1/q}} = {:.6}",
            input.n_total, int_rq
        )));
    }
    let rq = input.r_pow_inv_q();
    let grid = input.grid;
    let mass_of = |kappa: f64| -> f64 {
        let capped: Vec<f64> = rq.iter().map(|&rv| kappa.min(rv)).collect();
        grid.integrate(&capped)
    };
    solve_increasing(|k| Ok(mass_of(k)), input.n_total, input.n_total / input.omega(), 1e12, 1e-14)
}

/// Closed-form joint-limit kappa, valid for sigma at or above
/// [`sigma_star_formula`]: an affine function of sigma.
pub fn kappa_affine(input: &LimitInput, sigma: f64) -> f64 {
    let int_rq = input.int_r_pow_inv_q();
    (sigma * (input.n_total - int_rq) + int_rq) / input.omega()
}

/// Smallest ratio sigma at which the joint-limit kappa reaches the maximal
/// susceptible cap `max r^{1/q}` (closed form; requires `N > ∫ r^{1/q}`).
pub fn sigma_star_formula(input: &LimitInput) -> Result<f64> {
    check_exponents(input.p, input.q, false)?;
    let int_rq = input.int_r_pow_inv_q();
    if input.n_total <= int_rq {
        return Err(SimError::Regime(format!(
            "sigma* is defined only for N > ∫ r^{{1/q}} (N = {:.6}, ∫ = {:.6})",
            input.n_total, int_rq
        )));
    }
    let cap = input.risk.r_max.powf(1.0 / input.q);
    Ok((cap * input.omega() - int_rq) / (input.n_total - int_rq))
}

/// Locate sigma* directly: scan the computed joint-limit kappa over a
/// geometric sigma ladder for the crossing of the cap `max r^{1/q}`, then
/// bisect. Cross-checks [`sigma_star_formula`] without using it.
pub fn sigma_star_scan(input: &LimitInput) -> Result<f64> {
    check_exponents(input.p, input.q, false)?;
    let int_rq = input.int_r_pow_inv_q();
    if input.n_total <= int_rq {
        return Err(SimError::Regime(format!(
            "sigma* is defined only for N > ∫ r^{{1/q}} (N = {:.6}, ∫ = {:.6})",
            input.n_total, int_rq
        )));
    }
    let cap = input.risk.r_max.powf(1.0 / input.q);
    let gap = |sigma: f64| -> Result<f64> { Ok(joint_linear(input, sigma)?.scalar - cap) };
    let mut lo = 1e-6;
    let mut glo = gap(lo)?;
    let mut guard = 0;
    while glo > 0.0 {
        lo *= 0.25;
        glo = gap(lo)?;
        guard += 1;
        if guard > 60 {
            // kappa exceeds the cap even for tiny sigma: r is constant and
            // sigma* degenerates to zero.
            return Ok(0.0);
        }
    }
    let mut hi = lo.max(1.0);
    let mut ghi = gap(hi)?;
    guard = 0;
    while ghi < 0.0 {
        hi *= 2.0;
        ghi = gap(hi)?;
        guard += 1;
        if guard > 80 {
            return Err(SimError::numerics("sigma* scan found no upper bracket"));
        }
    }
    let (sigma, _) =
        crate::solver::illinois_root(gap, lo, hi, glo, ghi, 1e-10, 1e-12 * cap, 300)?;
    Ok(sigma)
}

/// The `sigma -> 0` endpoints of the joint limit for p = 1: the susceptible
/// level and the total infected mass (which concentrates as sigma shrinks).
pub fn joint_small_sigma(input: &LimitInput) -> Result<(f64, f64)> {
    check_exponents(input.p, input.q, false)?;
    let level = input.risk.r_min.powf(1.0 / input.q);
    let omega = input.omega();
    if input.n_total <= level * omega {
        return Err(SimError::NoEndemicEquilibrium(format!(
            "total mass N = {:.6} does not exceed the minimal susceptible load {:.6}",
            input.n_total,
            level * omega
        )));
    }
    Ok((level, input.n_total - level * omega))
}
