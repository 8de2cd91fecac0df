//! Time integration of the two-species system by an IMEX scheme.
//!
//! Diffusion is treated implicitly (one banded backward-Euler solve per
//! species and step, unconditionally stable); the infection exchange
//! `beta S^q I^p - gamma I` is evaluated once per step and applied with
//! opposite signs to the two species, so it cancels exactly in the discrete
//! total population. Each backward-Euler operator also preserves the grid
//! quadrature (its transpose fixes constants), hence the total mass is
//! conserved to linear-solver rounding; a proportional rescale removes even
//! that random walk. Undershoots of the explicit exchange are limited at the
//! donor species, which keeps both densities nonnegative without breaking
//! the shared-evaluation property.

use crate::config::Scenario;
use crate::equilibrium::EquilibriumState;
use crate::error::{Result, SimError};
use crate::grid::Field;
use crate::linalg::BandLu;

/// Floor inside fractional powers of the infected density: `I^p` has
/// unbounded slope at zero, and an exact zero would otherwise freeze the
/// infection term at nodes the disease has not reached yet.
const I_FLOOR: f64 = 1e-14;

/// Densities of the two species at one instant.
#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub s: Field,
    pub i: Field,
    pub t: f64,
    /// Conserved total population the stepping repairs toward.
    pub n_target: f64,
}

impl EvolutionState {
    /// The scenario's uniform initial data at time zero.
    pub fn initial(scen: &Scenario) -> EvolutionState {
        EvolutionState {
            s: Field::constant(&scen.grid, scen.s0),
            i: Field::constant(&scen.grid, scen.i0),
            t: 0.0,
            n_target: scen.n_total,
        }
    }

    /// Total population currently held by the state.
    pub fn mass(&self, scen: &Scenario) -> f64 {
        scen.grid.integrate(&self.s.values) + scen.grid.integrate(&self.i.values)
    }
}

/// Explicit-exchange stability heuristic: the largest step for which
/// `dt * max(beta S^q I^{p-1} + gamma) <= 1/2` at the given state.
pub fn suggested_dt(scen: &Scenario, state: &EvolutionState) -> f64 {
    let (p, q) = (scen.cfg.p, scen.cfg.q);
    let mut rate = 0.0f64;
    for k in 0..scen.grid.n_nodes() {
        let s = state.s.values[k].max(0.0);
        let i = state.i.values[k].max(I_FLOOR);
        let sq = if q == 1.0 { s } else { s.powf(q) };
        let ipm1 = if p == 1.0 { 1.0 } else { i.powf(p - 1.0) };
        rate = rate.max(scen.coef.beta.values[k] * sq * ipm1 + scen.coef.gamma.values[k]);
    }
    0.5 / rate.max(f64::MIN_POSITIVE)
}

/// A stepper with cached backward-Euler factorizations for one pair of
/// diffusion rates and one step size.
pub struct Simulator<'a> {
    scen: &'a Scenario,
    d_s: f64,
    d_i: f64,
    dt: f64,
    lu_s: BandLu,
    lu_i: BandLu,
    /// Mass removed by clipping rounding-level negatives, accumulated.
    clipped_mass: f64,
    /// Whether the exchange limiter engaged during the last step.
    last_limited: bool,
    steps: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(scen: &'a Scenario, d_s: f64, d_i: f64, dt: f64) -> Result<Simulator<'a>> {
        if !(d_s > 0.0) || !(d_i > 0.0) {
            return Err(SimError::config(format!(
                "diffusion rates must be positive: d_S = {d_s}, d_I = {d_i}"
            )));
        }
        if !(dt > 0.0) {
            return Err(SimError::config(format!("the time step must be positive, got {dt}")));
        }
        let (lu_s, lu_i) = Self::factorize(scen, d_s, d_i, dt)?;
        Ok(Simulator {
            scen,
            d_s,
            d_i,
            dt,
            lu_s,
            lu_i,
            clipped_mass: 0.0,
            last_limited: false,
            steps: 0,
        })
    }

    fn factorize(scen: &Scenario, d_s: f64, d_i: f64, dt: f64) -> Result<(BandLu, BandLu)> {
        let a_s = scen.grid.assemble(-dt * d_s, |_| 1.0);
        let a_i = scen.grid.assemble(-dt * d_i, |_| 1.0);
        Ok((a_s.lu_factor()?, a_i.lu_factor()?))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Replace the step size, refactorizing the implicit operators.
    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(SimError::config(format!("the time step must be positive, got {dt}")));
        }
        if dt != self.dt {
            let (lu_s, lu_i) = Self::factorize(self.scen, self.d_s, self.d_i, dt)?;
            self.lu_s = lu_s;
            self.lu_i = lu_i;
            self.dt = dt;
        }
        Ok(())
    }

    /// Whether the last step had to limit the exchange term to keep a
    /// density nonnegative (a sign the step size is too large for the
    /// reaction).
    pub fn last_limited(&self) -> bool {
        self.last_limited
    }

    /// Total mass removed by positivity clipping so far (rounding-level by
    /// construction; reported for accounting).
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advance one step of the cached size.
    pub fn step(&mut self, state: &EvolutionState) -> Result<EvolutionState> {
        self.step_with_dt(state, self.dt)
    }

    /// Advance one step of an arbitrary size (refactorizes when it differs
    /// from the cached one; used to land exactly on snapshot times).
    pub fn step_with_dt(&mut self, state: &EvolutionState, dt: f64) -> Result<EvolutionState> {
        self.set_dt(dt)?;
        let scen = self.scen;
        let grid = &scen.grid;
        grid.check_field(&state.s)?;
        grid.check_field(&state.i)?;
        let n = grid.n_nodes();
        let (p, q) = (scen.cfg.p, scen.cfg.q);
        if p < 1.0 && state.i.values.iter().any(|&v| !(v > 0.0)) {
            return Err(SimError::config(
                "sublinear incidence in I requires strictly positive infected density",
            ));
        }
        if q < 1.0 && state.s.values.iter().any(|&v| !(v > 0.0)) {
            return Err(SimError::config(
                "sublinear incidence in S requires strictly positive susceptible density",
            ));
        }

        // Shared exchange evaluation, limited so neither donor goes negative.
        let mut limited = false;
        let mut s_expl = vec![0.0; n];
        let mut i_expl = vec![0.0; n];
        for k in 0..n {
            let s = state.s.values[k];
            let i = state.i.values[k];
            let sq = if q == 1.0 { s } else { s.max(0.0).powf(q) };
            let ip = if p == 1.0 { i } else { i.max(I_FLOOR).powf(p) };
            let mut g = scen.coef.beta.values[k] * sq * ip - scen.coef.gamma.values[k] * i;
            if g * dt > s {
                g = s / dt;
                limited = true;
            } else if -g * dt > i {
                g = -i / dt;
                limited = true;
            }
            s_expl[k] = s - dt * g;
            i_expl[k] = i + dt * g;
        }
        self.last_limited = limited;

        // Implicit diffusion: both operators preserve nonnegativity and the
        // quadrature, so only rounding-level negatives can appear.
        let mut s_new = self.lu_s.solve(&s_expl);
        let mut i_new = self.lu_i.solve(&i_expl);
        let mut clipped = 0.0;
        for v in s_new.iter_mut().chain(i_new.iter_mut()) {
            if *v < 0.0 {
                clipped += -*v;
                *v = 0.0;
            }
        }
        self.clipped_mass += clipped * grid.weight;

        // Proportional repair pins the total population exactly.
        let mass = grid.integrate(&s_new) + grid.integrate(&i_new);
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(SimError::numerics(format!(
                "total population became degenerate ({mass:.3e}) at t = {:.6e}",
                state.t
            )));
        }
        let scale = state.n_target / mass;
        for v in s_new.iter_mut().chain(i_new.iter_mut()) {
            *v *= scale;
        }

        self.steps += 1;
        Ok(EvolutionState {
            s: Field::from_values(grid, s_new),
            i: Field::from_values(grid, i_new),
            t: state.t + dt,
            n_target: state.n_target,
        })
    }
}

/// One IMEX step as a standalone call (factorizes afresh; use [`Simulator`]
/// for repeated stepping).
pub fn step_imex(state: &EvolutionState, scen: &Scenario, dt: f64) -> Result<EvolutionState> {
    Simulator::new(scen, scen.cfg.d_s, scen.cfg.d_i, dt)?.step(state)
}

/// March the scenario's initial data to `t_end`, returning one state per
/// requested snapshot time (sorted; `t_end` itself when none are given).
/// A nonpositive `dt` asks for the stability heuristic. The step is halved
/// for the remainder of the run whenever the exchange limiter engages.
pub fn run_to_time(
    scen: &Scenario,
    t_end: f64,
    dt: f64,
    snapshot_times: &[f64],
) -> Result<Vec<EvolutionState>> {
    if !(t_end > 0.0) {
        return Err(SimError::config(format!("the horizon must be positive, got {t_end}")));
    }
    let mut times: Vec<f64> = if snapshot_times.is_empty() {
        vec![t_end]
    } else {
        snapshot_times.to_vec()
    };
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    if times.iter().any(|&t| !(t > 0.0) || t > t_end) {
        return Err(SimError::config(format!(
            "snapshot times must lie in (0, {t_end}], got {times:?}"
        )));
    }

    let mut state = EvolutionState::initial(scen);
    let mut dt_run = if dt > 0.0 { dt } else { suggested_dt(scen, &state) };
    let dt_min = dt_run * 2f64.powi(-40);
    let mut sim = Simulator::new(scen, scen.cfg.d_s, scen.cfg.d_i, dt_run)?;
    let mut snapshots = Vec::with_capacity(times.len());
    for &target in &times {
        while state.t < target {
            let step_dt = dt_run.min(target - state.t);
            state = sim.step_with_dt(&state, step_dt)?;
            if sim.last_limited() && dt_run * 0.5 >= dt_min {
                dt_run *= 0.5;
            }
        }
        state.t = target;
        snapshots.push(state.clone());
    }
    Ok(snapshots)
}

/// Relax the scenario's initial data toward a steady state: steps until the
/// max-norm residual of the two steady equations falls below `tol_resid` or
/// the clock passes `max_t`. The result reports the residual actually
/// reached; `converged` records whether the tolerance was met, and
/// `outer_iterations` counts time steps.
pub fn relax_to_steady(scen: &Scenario, tol_resid: f64, max_t: f64) -> Result<EquilibriumState> {
    if !(tol_resid > 0.0) {
        return Err(SimError::config(format!(
            "the residual tolerance must be positive, got {tol_resid}"
        )));
    }
    if !(max_t > 0.0) {
        return Err(SimError::config(format!("the time budget must be positive, got {max_t}")));
    }
    let grid = &scen.grid;
    let n = grid.n_nodes();
    let (d_s, d_i) = (scen.cfg.d_s, scen.cfg.d_i);
    let mut state = EvolutionState::initial(scen);
    let mut dt_run =
        if scen.cfg.run.dt > 0.0 { scen.cfg.run.dt } else { suggested_dt(scen, &state) };
    let dt_min = dt_run * 2f64.powi(-40);
    let mut sim = Simulator::new(scen, d_s, d_i, dt_run)?;

    let mut lap_s = vec![0.0; n];
    let mut lap_i = vec![0.0; n];
    let residual_of = |state: &EvolutionState, lap_s: &mut Vec<f64>, lap_i: &mut Vec<f64>| {
        grid.apply_laplacian(&state.s.values, lap_s);
        grid.apply_laplacian(&state.i.values, lap_i);
        let mut res = 0.0f64;
        for k in 0..n {
            let s = state.s.values[k];
            let i = state.i.values[k];
            let sq = if scen.cfg.q == 1.0 { s } else { s.max(0.0).powf(scen.cfg.q) };
            let ip = if scen.cfg.p == 1.0 { i } else { i.max(I_FLOOR).powf(scen.cfg.p) };
            let g = scen.coef.beta.values[k] * sq * ip - scen.coef.gamma.values[k] * i;
            res = res.max((d_s * lap_s[k] - g).abs());
            res = res.max((d_i * lap_i[k] + g).abs());
        }
        res
    };

    let mut residual = residual_of(&state, &mut lap_s, &mut lap_i);
    while residual > tol_resid && state.t < max_t {
        let step_dt = dt_run.min(max_t - state.t);
        state = sim.step_with_dt(&state, step_dt)?;
        if sim.last_limited() && dt_run * 0.5 >= dt_min {
            dt_run *= 0.5;
        }
        residual = residual_of(&state, &mut lap_s, &mut lap_i);
    }

    let kappa_field: Vec<f64> =
        (0..n).map(|k| d_s * state.s.values[k] + d_i * state.i.values[k]).collect();
    let kappa = grid.integrate(&kappa_field) / grid.measure_h();
    let constancy = kappa_field.iter().map(|&v| (v - kappa).abs()).fold(0.0, f64::max);
    let mass_error = state.n_target - state.mass(scen);
    Ok(EquilibriumState {
        s: state.s,
        i: state.i,
        kappa,
        pde_residual: residual,
        kappa_constancy: constancy,
        mass_error,
        outer_iterations: sim.steps(),
        inner_iterations: 0,
        converged: residual <= tol_resid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::fields::CoefficientForm;
    use crate::grid::{inf_norm, DomainSpec};

    fn constant_scenario(beta: f64, gamma: f64, d_s: f64, d_i: f64) -> Scenario {
        let mut cfg = ScenarioConfig::preset_sim1();
        cfg.domain = DomainSpec::Interval { length: 1.0, n: 33 };
        cfg.beta = CoefficientForm::Constant(beta);
        cfg.gamma = CoefficientForm::Constant(gamma);
        cfg.p = 1.0;
        cfg.q = 1.0;
        cfg.d_s = d_s;
        cfg.d_i = d_i;
        cfg.n_total = None;
        cfg.s0 = Some(0.8);
        cfg.i0 = Some(0.2);
        Scenario::build(cfg).unwrap()
    }

    #[test]
    fn balanced_constant_state_is_a_fixed_point() {
        // beta S I = gamma I at S = 1/2, and constants are invisible to the
        // diffusion stencil, so the state must not move.
        let scen = constant_scenario(2.0, 1.0, 0.7, 0.013);
        let mut state = EvolutionState {
            s: Field::constant(&scen.grid, 0.5),
            i: Field::constant(&scen.grid, 0.5),
            t: 0.0,
            n_target: scen.grid.measure_h(),
        };
        let mut sim = Simulator::new(&scen, scen.cfg.d_s, scen.cfg.d_i, 0.05).unwrap();
        for _ in 0..100 {
            state = sim.step(&state).unwrap();
        }
        let ds: Vec<f64> = state.s.values.iter().map(|&v| v - 0.5).collect();
        let di: Vec<f64> = state.i.values.iter().map(|&v| v - 0.5).collect();
        assert!(inf_norm(&ds) < 1e-12, "S moved by {}", inf_norm(&ds));
        assert!(inf_norm(&di) < 1e-12, "I moved by {}", inf_norm(&di));
        assert!(!sim.last_limited());
    }

    #[test]
    fn mass_stays_pinned_over_a_thousand_steps() {
        let mut cfg = ScenarioConfig::preset_sim1();
        cfg.domain = DomainSpec::Interval { length: 1.0, n: 65 };
        cfg.beta = CoefficientForm::Constant(2.0);
        cfg.gamma = CoefficientForm::Constant(1.0);
        cfg.p = 1.0;
        cfg.q = 0.5;
        cfg.d_s = 0.1;
        cfg.d_i = 0.002;
        let scen = Scenario::build(cfg).unwrap();
        let mut state = EvolutionState {
            s: Field::from_fn(&scen.grid, |x, _| 0.8 + 0.1 * (std::f64::consts::PI * x).cos()),
            i: Field::from_fn(&scen.grid, |x, _| 0.2 + 0.1 * (std::f64::consts::PI * x).sin()),
            t: 0.0,
            n_target: 0.0,
        };
        state.n_target = state.mass(&scen);
        let n0 = state.n_target;
        let mut sim = Simulator::new(&scen, scen.cfg.d_s, scen.cfg.d_i, 1e-3).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            state = sim.step(&state).unwrap();
            worst = worst.max((state.mass(&scen) - n0).abs());
            assert!(state.s.values.iter().all(|&v| v >= 0.0));
            assert!(state.i.values.iter().all(|&v| v >= 0.0));
        }
        assert!(worst <= 1e-10 * n0, "worst drift {worst:.3e}");
        assert!(sim.clipped_mass() <= 1e-12 * n0);
    }

    #[test]
    fn relaxation_finds_the_algebraic_equilibrium() {
        // Constant coefficients with N/|Omega| = 1: the endemic state is
        // S = gamma/beta = 1/2, I = 1/2.
        let scen = constant_scenario(2.0, 1.0, 0.7, 0.013);
        let state = relax_to_steady(&scen, 1e-10, 100.0).unwrap();
        assert!(state.converged);
        let ds: Vec<f64> = state.s.values.iter().map(|&v| v - 0.5).collect();
        let di: Vec<f64> = state.i.values.iter().map(|&v| v - 0.5).collect();
        assert!(inf_norm(&ds) < 1e-6, "S off by {}", inf_norm(&ds));
        assert!(inf_norm(&di) < 1e-6, "I off by {}", inf_norm(&di));
        assert!(state.mass_error.abs() < 1e-10 * scen.n_total);
        assert!(state.kappa_constancy < 1e-6);
    }

    #[test]
    fn subcritical_infections_die_out() {
        // beta < gamma with N/|Omega| = 1 keeps the reproduction number
        // below one; the infected mass must shrink and the state must head
        // to the disease-free distribution (N/|Omega|, 0).
        let scen = constant_scenario(0.8, 1.0, 0.5, 0.5);
        let snaps = run_to_time(&scen, 200.0, 0.0, &[]).unwrap();
        let final_state = &snaps[0];
        let i0_mass = scen.grid.integrate(&vec![scen.i0; scen.grid.n_nodes()]);
        let i_mass = scen.grid.integrate(&final_state.i.values);
        assert!(i_mass < i0_mass, "infected mass grew: {i_mass} vs {i0_mass}");
        assert!(final_state.i.inf_norm() < 1e-10);
        let ds: Vec<f64> = final_state.s.values.iter().map(|&v| v - 1.0).collect();
        assert!(inf_norm(&ds) < 1e-6);
    }

    #[test]
    fn snapshots_land_exactly_on_requested_times() {
        let scen = constant_scenario(2.0, 1.0, 0.3, 0.2);
        let snaps = run_to_time(&scen, 1.0, 0.3, &[0.5, 1.0]).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0].t, 0.5);
        assert_eq!(snaps[1].t, 1.0);
        // Out-of-range requests are refused.
        assert!(run_to_time(&scen, 1.0, 0.3, &[2.0]).is_err());
    }

    #[test]
    fn exchange_limiter_preserves_positivity_and_mass() {
        // A step so large the raw exchange would overdraw S.
        let scen = constant_scenario(5.0, 0.1, 0.2, 0.2);
        let state = EvolutionState {
            s: Field::constant(&scen.grid, 0.1),
            i: Field::constant(&scen.grid, 1.0),
            t: 0.0,
            n_target: 1.1 * scen.grid.measure_h(),
        };
        let next = step_imex(&state, &scen, 1.0).unwrap();
        assert!(next.s.values.iter().all(|&v| v >= 0.0));
        assert!(next.i.values.iter().all(|&v| v >= 0.0));
        let mass = next.mass(&scen);
        assert!((mass - state.n_target).abs() <= 1e-12 * state.n_target);
    }
}
