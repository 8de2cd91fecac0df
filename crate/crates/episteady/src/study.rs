//! Convergence studies: sweep a diffusion rate toward zero and measure how
//! fast the computed equilibria approach their limit profiles.
//!
//! Three sweeps are provided — infected diffusion `d_I`, susceptible
//! diffusion `d_S`, and the joint limit at a fixed ratio
//! `sigma = d_I / d_S` — each comparing the equilibrium of every row
//! against the limit profile the scenario's regime selects. Susceptible
//! errors use the nodewise max norm; infected errors use the max norm when
//! the limit has a pointwise density and the mass gap when it concentrates.
//! A concentration fraction (share of the infected mass within `delta` of
//! the lowest-risk set) quantifies measure-valued limits that have no
//! density to compare against.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::Scenario;
use crate::equilibrium::{solve_ee, EeProblem};
use crate::error::{Result, SimError};
use crate::grid::{neumaier_sum, Field, Grid};
use crate::limits::{self, LimitInput, LimitKind};
use crate::output::fmt_g17;

/// One row of a sweep: the swept parameter and the distances from the
/// computed equilibrium to the limit target.
#[derive(Debug, Clone)]
pub struct StudyRow {
    /// The swept diffusion rate (d_I, d_S, or d_I with d_S = d_I / sigma).
    pub param: f64,
    /// Max-norm distance of S from its limit profile.
    pub err_s_inf: f64,
    /// Infected-side distance: max norm against a pointwise limit density,
    /// mass gap `|∫I − target|` against a concentrating limit.
    pub err_i: f64,
    /// Fraction of the infected mass within `delta` of the lowest-risk set.
    pub concentration: f64,
    /// Susceptible ceiling `kappa / d_S` of the row's equilibrium.
    pub kappa_over_ds: f64,
    /// Max-norm residual of the steady equations at the computed state.
    pub residual: f64,
    pub converged: bool,
    /// Why the row was flagged, when the equilibrium solve failed.
    pub error: Option<String>,
}

/// A completed sweep, rows sorted by the swept parameter descending.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    /// Which limit profile the rows were measured against.
    pub regime: LimitKind,
    /// Regime discriminant `N − ∫ r^{1/q}`, computed once per study.
    pub population_gap: f64,
    /// Log-log least-squares rate of `err_I` against the parameter; only
    /// fitted when the infected density is expected to vanish linearly.
    pub fitted_slope: Option<f64>,
}

impl StudyReport {
    /// Serialize with `#`-prefixed context lines followed by the fixed
    /// column header. Deterministic: identical inputs yield identical text.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# regime: {:?}\n", self.regime));
        out.push_str(&format!("# population_gap: {}\n", fmt_g17(self.population_gap)));
        if let Some(slope) = self.fitted_slope {
            out.push_str(&format!("# fitted_slope: {}\n", fmt_g17(slope)));
        }
        out.push_str("param,err_S_inf,err_I,concentration,kappa_over_dS,residual,converged\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_g17(r.param),
                fmt_g17(r.err_s_inf),
                fmt_g17(r.err_i),
                fmt_g17(r.concentration),
                fmt_g17(r.kappa_over_ds),
                fmt_g17(r.residual),
                r.converged
            ));
        }
        out
    }
}

/// Cell size along the axes the grid actually has.
fn spacing(grid: &Grid) -> f64 {
    if grid.dim == 1 {
        grid.hx
    } else {
        grid.hx.max(grid.hy)
    }
}

/// Nodes within distance `delta` of any masked node.
fn dilate_mask(grid: &Grid, mask: &[bool], delta: f64) -> Vec<bool> {
    let seeds: Vec<usize> = (0..grid.n_nodes()).filter(|&k| mask[k]).collect();
    let d2 = delta * delta;
    (0..grid.n_nodes()).map(|j| seeds.iter().any(|&k| grid.dist2(j, k) <= d2)).collect()
}

/// Share of the mass of `values` carried by masked nodes.
fn masked_fraction(grid: &Grid, values: &[f64], mask: &[bool]) -> f64 {
    let total = grid.integrate(values);
    if !(total > 0.0) {
        return f64::NAN;
    }
    let inside = grid.weight
        * neumaier_sum(values.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }));
    inside / total
}

/// Fraction of the infected mass within distance `delta` of the risk set:
/// a numerical surrogate for convergence to point masses on that set.
pub fn concentration_metric(
    i: &Field,
    risk_mask: &[bool],
    delta: f64,
    grid: &Grid,
) -> Result<f64> {
    grid.check_field(i)?;
    if risk_mask.len() != grid.n_nodes() {
        return Err(SimError::config(format!(
            "risk mask has {} entries for {} nodes",
            risk_mask.len(),
            grid.n_nodes()
        )));
    }
    if !risk_mask.iter().any(|&m| m) {
        return Err(SimError::config(
            "the risk set is empty; the concentration fraction is undefined",
        ));
    }
    let h = spacing(grid);
    if !(delta >= h) {
        return Err(SimError::config(format!(
            "the dilation radius must cover at least one cell (delta = {delta}, spacing = {h})"
        )));
    }
    let dilated = dilate_mask(grid, risk_mask, delta);
    let f = masked_fraction(grid, &i.values, &dilated);
    if f.is_nan() {
        return Err(SimError::numerics(
            "the infected mass vanishes; the concentration fraction is undefined",
        ));
    }
    Ok(f)
}

/// What each row's equilibrium is measured against.
enum InfectedTarget {
    /// Pointwise limit density: max-norm error.
    Nodal(Vec<f64>),
    /// Concentrating limit with a known total mass: mass-gap error.
    Mass(f64),
    /// Vanishing limit: the error is the infected max norm itself.
    Zero,
}

struct Targets {
    s_values: Vec<f64>,
    i_target: InfectedTarget,
    dilated: Vec<bool>,
}

fn validate_descending(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(SimError::config(format!("{name} needs at least one value")));
    }
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(SimError::config(format!("{name} must be positive and finite: {values:?}")));
    }
    if values.windows(2).any(|w| w[0] <= w[1]) {
        return Err(SimError::config(format!("{name} must be strictly descending: {values:?}")));
    }
    Ok(())
}

fn resolve_delta(scen: &Scenario) -> Result<f64> {
    let h = spacing(&scen.grid);
    let delta = scen.cfg.sweep.delta.unwrap_or(3.0 * h);
    if !(delta >= h) {
        return Err(SimError::config(format!(
            "the dilation radius must cover at least one cell (delta = {delta}, spacing = {h})"
        )));
    }
    Ok(delta)
}

fn population_gap(scen: &Scenario) -> f64 {
    let rq = scen.coef.risk.r_pow(&scen.grid, 1.0 / scen.cfg.q);
    scen.n_total - scen.grid.integrate(&rq.values)
}

/// Solve one row's equilibrium and measure it; failures flag the row
/// instead of aborting the sweep.
fn ee_row(scen: &Scenario, d_s: f64, d_i: f64, param: f64, targets: &Targets) -> StudyRow {
    let prob = EeProblem::with_diffusivities(scen, d_s, d_i);
    match solve_ee(&prob) {
        Ok(state) => {
            let err_s_inf = state
                .s
                .values
                .iter()
                .zip(&targets.s_values)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0, f64::max);
            let err_i = match &targets.i_target {
                InfectedTarget::Nodal(t) => state
                    .i
                    .values
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| (a - b).abs())
                    .fold(0.0, f64::max),
                InfectedTarget::Mass(m) => (scen.grid.integrate(&state.i.values) - m).abs(),
                InfectedTarget::Zero => state.i.inf_norm(),
            };
            let concentration = masked_fraction(&scen.grid, &state.i.values, &targets.dilated);
            StudyRow {
                param,
                err_s_inf,
                err_i,
                concentration,
                kappa_over_ds: state.kappa / d_s,
                residual: state.pde_residual,
                converged: state.converged,
                error: None,
            }
        }
        Err(e) => StudyRow {
            param,
            err_s_inf: f64::NAN,
            err_i: f64::NAN,
            concentration: f64::NAN,
            kappa_over_ds: f64::NAN,
            residual: f64::NAN,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Run `f` over the values, possibly on several threads; results keep the
/// input order, so reports are identical however many workers ran.
fn compute_rows<F>(values: &[f64], jobs: usize, f: F) -> Vec<StudyRow>
where
    F: Fn(f64) -> StudyRow + Sync,
{
    let workers = jobs.max(1).min(values.len());
    if workers <= 1 {
        return values.iter().map(|&v| f(v)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<StudyRow>>> = values.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= values.len() {
                    break;
                }
                let row = f(values[k]);
                *slots[k].lock().expect("row slot poisoned") = Some(row);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("row slot poisoned").expect("row not computed"))
        .collect()
}

/// Least-squares slope of `ln err_I` against `ln param` over converged rows.
fn log_log_slope(rows: &[StudyRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.converged && r.err_i.is_finite() && r.err_i > 0.0)
        .map(|r| (r.param.ln(), r.err_i.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
    (den > 0.0).then(|| num / den)
}

/// Sweep the infected diffusion rate down its (descending) ladder at fixed
/// `d_S`, measuring each equilibrium against the vanishing-`d_I` limit:
/// constant susceptibles, with the infected mass concentrating on the
/// lowest-risk set (linear incidence) or following an explicit density
/// (sublinear incidence).
pub fn sweep_di(scen: &Scenario, di_values: &[f64], jobs: usize) -> Result<StudyReport> {
    validate_descending("the d_I ladder", di_values)?;
    let input = LimitInput::from_scenario(scen);
    let profile = limits::small_di_profile(&input)?;
    let delta = resolve_delta(scen)?;
    let targets = Targets {
        s_values: profile.s.values.clone(),
        i_target: if scen.cfg.p == 1.0 {
            InfectedTarget::Mass(profile.infected_mass)
        } else {
            InfectedTarget::Nodal(profile.i.values.clone())
        },
        dilated: dilate_mask(&scen.grid, &scen.coef.risk.risk_mask, delta),
    };
    let rows =
        compute_rows(di_values, jobs, |d_i| ee_row(scen, scen.cfg.d_s, d_i, d_i, &targets));
    Ok(StudyReport {
        rows,
        regime: profile.kind,
        population_gap: population_gap(scen),
        fitted_slope: None,
    })
}

/// Sweep the susceptible diffusion rate down its (descending) ladder at
/// fixed `d_I`. The regime is decided once from the sign of `N − ∫ r^{1/q}`
/// (or the sublinear profile for p < 1); in the small-population regime the
/// infected density vanishes linearly and its log-log rate is fitted.
pub fn sweep_ds(scen: &Scenario, ds_values: &[f64], jobs: usize) -> Result<StudyReport> {
    validate_descending("the d_S ladder", ds_values)?;
    let input = LimitInput::from_scenario(scen);
    let profiles = limits::small_ds_profiles(&input)?;
    let profile = &profiles[0];
    let delta = resolve_delta(scen)?;
    let targets = Targets {
        s_values: profile.s.values.clone(),
        i_target: match profile.kind {
            LimitKind::SmallDsSmallPopulation => InfectedTarget::Zero,
            _ => InfectedTarget::Nodal(profile.i.values.clone()),
        },
        dilated: dilate_mask(&scen.grid, &scen.coef.risk.risk_mask, delta),
    };
    let rows =
        compute_rows(ds_values, jobs, |d_s| ee_row(scen, d_s, scen.cfg.d_i, d_s, &targets));
    let fitted_slope = (profile.kind == LimitKind::SmallDsSmallPopulation)
        .then(|| log_log_slope(&rows))
        .flatten();
    Ok(StudyReport {
        rows,
        regime: profile.kind,
        population_gap: population_gap(scen),
        fitted_slope,
    })
}

/// Sweep both diffusion rates toward zero at the fixed ratio
/// `sigma = d_I / d_S` (rows list d_I; each row uses d_S = d_I / sigma),
/// measuring against the joint-limit piecewise profile.
pub fn sweep_joint(
    scen: &Scenario,
    sigma: f64,
    di_values: &[f64],
    jobs: usize,
) -> Result<StudyReport> {
    validate_descending("the d_I ladder", di_values)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SimError::config(format!("sigma must be positive and finite, got {sigma}")));
    }
    let input = LimitInput::from_scenario(scen);
    let profile = limits::joint_profile(&input, sigma)?;
    let delta = resolve_delta(scen)?;
    let targets = Targets {
        s_values: profile.s.values.clone(),
        i_target: InfectedTarget::Nodal(profile.i.values.clone()),
        dilated: dilate_mask(&scen.grid, &scen.coef.risk.risk_mask, delta),
    };
    let rows =
        compute_rows(di_values, jobs, |d_i| ee_row(scen, d_i / sigma, d_i, d_i, &targets));
    Ok(StudyReport {
        rows,
        regime: profile.kind,
        population_gap: population_gap(scen),
        fitted_slope: None,
    })
}
