//! Acceptance checks: ten end-to-end guarantees of the toolkit, each run on
//! a desk-scale problem with tolerances fixed up front. Every test prints a
//! single `acceptance NN (<label>): PASS|FAIL` verdict (visible with
//! `--nocapture`) followed by its sub-check details, then asserts.

use episteady::config::{Scenario, ScenarioConfig};
use episteady::equilibrium::{solve_ee, EeProblem};
use episteady::evolve::{relax_to_steady, suggested_dt, EvolutionState, Simulator};
use episteady::fields::{CoefficientForm, Coefficients, RiskData};
use episteady::grid::{DomainSpec, Field, Grid};
use episteady::limits::{self, LimitInput};
use episteady::spectra::{compute_r0, kpp_threshold, scenario_r0, solve_fisher_kpp, Patch};
use episteady::study::{concentration_metric, sweep_di, sweep_ds, sweep_joint};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Print the one-line verdict plus per-check details, then assert.
fn verdict(id: u32, label: &str, checks: Vec<(bool, String)>) {
    let ok = checks.iter().all(|c| c.0);
    println!("acceptance {id:02} ({label}): {}", if ok { "PASS" } else { "FAIL" });
    for (good, line) in &checks {
        println!("    [{}] {line}", if *good { "ok" } else { "FAIL" });
    }
    assert!(ok, "acceptance {id:02} ({label}) failed");
}

fn dist_const(f: &Field, c: f64) -> f64 {
    f.values.iter().map(|&v| (v - c).abs()).fold(0.0, f64::max)
}

fn dist_fields(a: &Field, b: &Field) -> f64 {
    a.values.iter().zip(&b.values).map(|(&x, &y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Unit square with constant transmission/recovery and linear incidence.
fn constant_scenario(beta: f64, gamma: f64, q: f64, s0: f64, i0: f64, d_i: f64) -> Scenario {
    let mut cfg = ScenarioConfig::preset_sim1();
    cfg.p = 1.0;
    cfg.q = q;
    cfg.d_s = 1.0;
    cfg.d_i = d_i;
    cfg.domain = DomainSpec::Rectangle { lx: 1.0, ly: 1.0, nx: 65, ny: 65 };
    cfg.beta = CoefficientForm::Constant(beta);
    cfg.gamma = CoefficientForm::Constant(gamma);
    cfg.n_total = None;
    cfg.s0 = Some(s0);
    cfg.i0 = Some(i0);
    Scenario::build(cfg).unwrap()
}

/// With constant coefficients on the unit square the steady state is exact
/// algebra: beta S = gamma fixes S, conservation fixes I. Both the direct
/// solver and time relaxation must land on it to 1e-8.
#[test]
fn a01_constant_coefficients_recover_the_even_split() {
    // beta = 2, gamma = 1, S0 + I0 = 1 = N/|Omega| force S = I = 0.5.
    let scen = constant_scenario(2.0, 1.0, 1.0, 0.8, 0.2, 0.5);
    let ee = solve_ee(&EeProblem::from_scenario(&scen)).unwrap();
    let rx = relax_to_steady(&scen, 1e-10, 60.0).unwrap();
    let e_direct = dist_const(&ee.s, 0.5).max(dist_const(&ee.i, 0.5));
    let e_relaxed = dist_const(&rx.s, 0.5).max(dist_const(&rx.i, 0.5));
    verdict(
        1,
        "constant coefficients, even split",
        vec![
            (ee.converged, "direct solve converged".into()),
            (e_direct <= 1e-8, format!("direct max-norm error {e_direct:.2e} <= 1e-8")),
            (rx.converged, "relaxation reached its residual target".into()),
            (e_relaxed <= 1e-8, format!("relaxed max-norm error {e_relaxed:.2e} <= 1e-8")),
        ],
    );
}

/// The reproduction number must reproduce its constant-coefficient closed
/// form exactly, decrease strictly in d_I for the two-bump transmission, and
/// approach its zero- and infinite-diffusion limits at the extreme rates.
#[test]
fn a02_reproduction_number_closed_form_and_limits() {
    let mut checks = Vec::new();

    // Constant cases: R0 = (N/|Omega|)^q beta/gamma.
    let scen_a = constant_scenario(2.0, 1.0, 1.0, 0.8, 0.2, 0.3);
    let r0_a = scenario_r0(&scen_a, 0.3).unwrap().value;
    checks.push(((r0_a - 2.0).abs() <= 1e-8, format!("q = 1 constant case: R0 = {r0_a:.12} vs 2")));
    // Mean density 2, q = 1/2: R0 = sqrt(2) * 3 / 1.5.
    let scen_b = constant_scenario(3.0, 1.5, 0.5, 1.5, 0.5, 0.7);
    let want_b = 2f64.sqrt() * 2.0;
    let r0_b = scenario_r0(&scen_b, 0.7).unwrap().value;
    checks.push((
        (r0_b - want_b).abs() <= 1e-8,
        format!("q = 1/2 constant case: R0 = {r0_b:.12} vs {want_b:.12}"),
    ));

    let scen = Scenario::build(ScenarioConfig::preset_sim1()).unwrap();
    let ladder = [1e-2, 1e-1, 1.0, 10.0];
    let vals: Vec<f64> = ladder.iter().map(|&d| scenario_r0(&scen, d).unwrap().value).collect();
    let monotone = vals.windows(2).all(|w| w[1] < w[0]);
    checks.push((monotone, format!("strictly decreasing over d_I = {ladder:?}: {vals:?}")));

    // Extreme diffusion rates against the known endpoints.
    let ratio = (scen.n_total / scen.omega()).powf(scen.cfg.q);
    let lo_limit = ratio / scen.coef.risk.r_min;
    let r0_lo = scenario_r0(&scen, 1e-4).unwrap().value;
    checks.push((
        (r0_lo / lo_limit - 1.0).abs() <= 0.05,
        format!("d_I = 1e-4: R0 = {r0_lo:.4} within 5% of the vanishing-diffusion value {lo_limit:.4}"),
    ));
    let hi_limit = ratio * scen.grid.integrate(&scen.coef.beta.values)
        / scen.grid.integrate(&scen.coef.gamma.values);
    let r0_hi = scenario_r0(&scen, 1e3).unwrap().value;
    checks.push((
        (r0_hi / hi_limit - 1.0).abs() <= 0.05,
        format!("d_I = 1e3: R0 = {r0_hi:.4} within 5% of the well-mixed value {hi_limit:.4}"),
    ));

    verdict(2, "reproduction number: closed form and diffusion limits", checks);
}

/// Ten thousand time steps of the two-bump scenario may not leak population:
/// the relative drift of the conserved total stays at rounding level.
#[test]
fn a03_long_runs_conserve_population() {
    let scen = Scenario::build(ScenarioConfig::preset_sim1()).unwrap();
    let mut state = EvolutionState::initial(&scen);
    let dt = suggested_dt(&scen, &state);
    let mut sim = Simulator::new(&scen, scen.cfg.d_s, scen.cfg.d_i, dt).unwrap();
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        state = sim.step(&state).unwrap();
        drift = drift.max((state.mass(&scen) - scen.n_total).abs());
    }
    let rel = drift / scen.n_total;
    verdict(
        3,
        "population conserved over 10^4 steps",
        vec![(
            rel <= 1e-10,
            format!("relative drift {rel:.2e} <= 1e-10 (dt = {dt:.3e}, reached t = {:.1})", state.t),
        )],
    );
}

/// Shrinking the infected diffusion on the two-bump disk flattens the
/// susceptibles toward the level 0.16 and piles the infecteds onto the
/// highest-transmission spots.
#[test]
fn a04_small_d_i_concentrates_infecteds() {
    let scen = Scenario::build(ScenarioConfig::preset_sim1()).unwrap();
    let ladder = [1e-2, 1e-3, 1e-4, 1e-5];
    let mut errs = Vec::new();
    let mut all_conv = true;
    let mut last = None;
    for &di in &ladder {
        let ee = solve_ee(&EeProblem::with_diffusivities(&scen, 1.0, di)).unwrap();
        all_conv &= ee.converged;
        errs.push(dist_const(&ee.s, 0.16));
        last = Some(ee);
    }
    let last = last.unwrap();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let final_err = *errs.last().unwrap();
    let mass_i = scen.grid.integrate(&last.i.values);
    let target = scen.n_total - 0.16 * scen.omega();
    let conc =
        concentration_metric(&last.i, &scen.coef.risk.risk_mask, 0.15, &scen.grid).unwrap();
    verdict(
        4,
        "small d_I: susceptibles flatten, infecteds concentrate",
        vec![
            (all_conv, "all four equilibria converged".into()),
            (monotone, format!("|S - 0.16|_inf strictly decreasing: {errs:?}")),
            (final_err <= 0.05, format!("final |S - 0.16|_inf = {final_err:.3e} <= 0.05")),
            (
                (mass_i - target).abs() <= 0.05 * scen.n_total,
                format!("infected mass {mass_i:.4} within 0.05 N of {target:.4}"),
            ),
            (conc >= 0.9, format!("infected fraction within 0.15 of the risk set: {conc:.3} >= 0.9")),
        ],
    );
}

/// The opposite extreme: nearly immobile susceptibles track the risk profile
/// r^2 while the infecteds flatten to the explicit constant level.
#[test]
fn a05_small_d_s_pins_susceptibles_to_the_risk_profile() {
    let scen = Scenario::build(ScenarioConfig::preset_sim1()).unwrap();
    let ee = solve_ee(&EeProblem::with_diffusivities(&scen, 1e-5, 1.0)).unwrap();
    let rq = scen.r_pow_inv_q();
    let c = (scen.n_total - scen.int_r_pow()) / scen.omega();
    let err_s = dist_fields(&ee.s, &rq);
    let err_i = dist_const(&ee.i, c);
    verdict(
        5,
        "small d_S: susceptibles track r^2, infecteds flatten",
        vec![
            (ee.converged, "equilibrium converged".into()),
            (
                err_s <= 0.05 * rq.inf_norm(),
                format!("|S - r^2|_inf = {err_s:.3e} <= 5% of {:.3}", rq.inf_norm()),
            ),
            (err_i <= 0.05 * c, format!("|I - c|_inf = {err_i:.3e} <= 5% of c = {c:.4}")),
            ((c / 0.24 - 1.0).abs() <= 0.10, format!("level c = {c:.4} within 10% of 0.24")),
        ],
    );
}

/// Below the susceptible capacity the infecteds vanish linearly in d_S and
/// the susceptible shape is set by the nonlocal limit problem.
#[test]
fn a06_small_population_infecteds_vanish_linearly_in_d_s() {
    let mut cfg = ScenarioConfig::preset_sim1();
    cfg.n_total = Some(1.5);
    cfg.s0 = None;
    cfg.i0 = None;
    // d_I large enough that the first rung d_S = 1e-2 already sits in the
    // asymptotic regime of the d_S ladder.
    cfg.d_i = 0.1;
    let scen = Scenario::build(cfg).unwrap();
    let capacity = scen.int_r_pow();
    let r0 = scenario_r0(&scen, scen.cfg.d_i).unwrap().value;
    let report = sweep_ds(&scen, &[1e-2, 1e-3, 1e-4, 1e-5], 1).unwrap();
    let all_conv = report.rows.iter().all(|r| r.converged);
    let slope = report.fitted_slope.unwrap_or(f64::NAN);
    let nl = limits::small_ds_nonlocal(&LimitInput::from_scenario(&scen)).unwrap();
    let s_norm = nl.profile.s.inf_norm();
    let last = report.rows.last().unwrap();
    verdict(
        6,
        "reduced population: infecteds vanish linearly in d_S",
        vec![
            (
                scen.n_total < capacity,
                format!("N = {:.3} below the susceptible capacity {capacity:.3}", scen.n_total),
            ),
            (r0 > 1.0, format!("R0 = {r0:.3} > 1, so the equilibria exist")),
            (all_conv, "all four equilibria converged".into()),
            (
                (0.8..=1.2).contains(&slope),
                format!("log-log rate of |I|_inf in d_S: {slope:.3} in [0.8, 1.2]"),
            ),
            (
                last.err_s_inf <= 0.05 * s_norm,
                format!("|S - S*|_inf = {:.3e} <= 5% of {s_norm:.3}", last.err_s_inf),
            ),
        ],
    );
}

/// Driving both rates to zero at ratio sigma = 1 must reach the piecewise
/// profile of the joint limit, and above sigma* the mass-balance root must
/// match the affine closed form of the limiting kappa.
#[test]
fn a07_joint_limit_profile_and_closed_form_kappa() {
    let scen = Scenario::build(ScenarioConfig::preset_sim1()).unwrap();
    let input = LimitInput::from_scenario(&scen);
    let report = sweep_joint(&scen, 1.0, &[1e-2, 1e-3, 1e-4, 1e-5], 1).unwrap();
    let prof = limits::joint_profile(&input, 1.0).unwrap();
    let all_conv = report.rows.iter().all(|r| r.converged);
    let last = report.rows.last().unwrap();
    let rel_s = last.err_s_inf / prof.s.inf_norm();
    let rel_i = last.err_i / prof.i.inf_norm();
    let sigma_star = limits::sigma_star_formula(&input).unwrap();
    let mut gap = 0.0f64;
    for f in [1.0, 2.0, 8.0] {
        let sigma = f * sigma_star;
        let bisected = limits::joint_profile(&input, sigma).unwrap().scalar;
        gap = gap.max((limits::kappa_affine(&input, sigma) - bisected).abs());
    }
    verdict(
        7,
        "joint limit: profile match and affine kappa",
        vec![
            (all_conv, "all four equilibria converged".into()),
            (rel_s <= 0.05, format!("relative |S - S_sigma|_inf = {rel_s:.3e} <= 5%")),
            (rel_i <= 0.05, format!("relative |I - I_sigma|_inf = {rel_i:.3e} <= 5%")),
            (
                gap <= 1e-10,
                format!("affine kappa vs mass-balance root: max gap {gap:.2e} <= 1e-10 above sigma* = {sigma_star:.3}"),
            ),
        ],
    );
}

/// Sublinear incidence p = q = 1/2: both diffusion ladders must land on
/// their explicit limit profiles, whose scalar levels come from one-line
/// equations solved essentially exactly.
#[test]
fn a08_sublinear_exponents_reach_their_explicit_profiles() {
    let mut cfg = ScenarioConfig::preset_sim1();
    cfg.p = 0.5;
    cfg.q = 0.5;
    let scen = Scenario::build(cfg).unwrap();
    let input = LimitInput::from_scenario(&scen);
    let ladder = [1e-2, 1e-3, 1e-4, 1e-5];
    let rep_di = sweep_di(&scen, &ladder, 1).unwrap();
    let prof_di = limits::small_di_profile(&input).unwrap();
    let rep_ds = sweep_ds(&scen, &ladder, 1).unwrap();
    let profs_ds = limits::small_ds_profiles(&input).unwrap();
    let prof_ds = &profs_ds[0];
    let all_conv = rep_di.rows.iter().chain(&rep_ds.rows).all(|r| r.converged);
    let last_di = rep_di.rows.last().unwrap();
    let last_ds = rep_ds.rows.last().unwrap();
    let rel = [
        last_di.err_s_inf / prof_di.s.inf_norm(),
        last_di.err_i / prof_di.i.inf_norm(),
        last_ds.err_s_inf / prof_ds.s.inf_norm(),
        last_ds.err_i / prof_ds.i.inf_norm(),
    ];
    let resid = prof_di.scalar_residual.abs().max(prof_ds.scalar_residual.abs());
    let rel_max = rel.iter().cloned().fold(0.0, f64::max);
    verdict(
        8,
        "sublinear incidence: explicit limit profiles",
        vec![
            (all_conv, "all eight equilibria converged".into()),
            (
                rel_max <= 0.05,
                format!(
                    "relative profile errors (S, I per ladder) = [{:.2e}, {:.2e}, {:.2e}, {:.2e}] all <= 5%",
                    rel[0], rel[1], rel[2], rel[3]
                ),
            ),
            (resid <= 1e-12, format!("profile level residuals <= {resid:.2e}")),
        ],
    );
}

/// The logistic patch problem: absorbing-boundary thresholds on the interval
/// and the square match pi^2 and 2 pi^2, and the positive solution grows
/// strictly with the rate a.
#[test]
fn a09_logistic_patch_threshold_and_monotone_growth() {
    let pi2 = std::f64::consts::PI.powi(2);
    let g1 = Grid::build(&DomainSpec::Interval { length: 1.0, n: 129 }).unwrap();
    let beta1 = Field::constant(&g1, 1.0);
    let patch1 = Patch::whole(&g1, false);
    let a1 = kpp_threshold(1.0, &patch1, &beta1).unwrap();
    let g2 = Grid::build(&DomainSpec::Rectangle { lx: 1.0, ly: 1.0, nx: 65, ny: 65 }).unwrap();
    let beta2 = Field::constant(&g2, 1.0);
    let a2 = kpp_threshold(1.0, &Patch::whole(&g2, false), &beta2).unwrap();
    let mut positive = true;
    let mut monotone = true;
    let mut prev: Option<Field> = None;
    for f in [1.3, 1.8, 2.5, 3.5, 5.0] {
        let kr = solve_fisher_kpp(f * a1, 1.0, &patch1, &beta1).unwrap();
        positive &= kr.positive;
        if let Some(p) = &prev {
            monotone &= kr.u.values.iter().zip(&p.values).all(|(&now, &before)| now > before);
        }
        prev = Some(kr.u);
    }
    verdict(
        9,
        "logistic patch: absorbing threshold and growth in a",
        vec![
            ((a1 / pi2 - 1.0).abs() <= 0.01, format!("interval threshold {a1:.5} within 1% of pi^2")),
            (
                (a2 / (2.0 * pi2) - 1.0).abs() <= 0.01,
                format!("square threshold {a2:.5} within 1% of 2 pi^2"),
            ),
            (positive, "all five supercritical solutions strictly positive".into()),
            (monotone, "solution strictly increasing in a at every node".into()),
        ],
    );
}

/// Ten randomized rough-coefficient problems: the algebraic equilibrium
/// solver and plain time relaxation must agree to 1e-5 in the max norm on
/// both densities.
#[test]
fn a10_direct_and_relaxation_solvers_agree() {
    let mut rng = StdRng::seed_from_u64(20260817);
    let spec = DomainSpec::Interval { length: 1.0, n: 33 };
    let mut checks = Vec::new();
    let mut worst = 0.0f64;
    for case in 0..10usize {
        let p = if case % 2 == 0 { 1.0 } else { 0.5 };
        let q = [0.5, 1.0, 2.0][case % 3];
        let d_s = 10f64.powf(rng.gen_range(-1.3..0.0));
        let d_i = 10f64.powf(rng.gen_range(-1.3..0.0));
        let grid = Grid::build(&spec).unwrap();
        let n = grid.n_nodes();
        let beta_vals: Vec<f64> =
            (0..n).map(|_| 1.5 * rng.gen_range(-0.6f64..0.6).exp()).collect();
        let gamma_vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.6f64..0.6).exp()).collect();
        let beta = Field::from_values(&grid, beta_vals);
        let gamma = Field::from_values(&grid, gamma_vals);
        let (mut s0, mut i0) = (0.7, 0.3);
        let mut n_total = (s0 + i0) * grid.measure_h();
        if p == 1.0 {
            // Keep the endemic branch comfortably supercritical.
            let r0 = compute_r0(&grid, &beta, &gamma, 1.0, q, d_i, n_total).unwrap().value;
            if r0 < 1.3 {
                let f = (1.45 / r0).powf(1.0 / q);
                s0 *= f;
                i0 *= f;
                n_total *= f;
            }
        }
        let risk = RiskData::build(&grid, &beta, &gamma, n_total, None).unwrap();
        let mut cfg = ScenarioConfig::preset_sim1();
        cfg.p = p;
        cfg.q = q;
        cfg.d_s = d_s;
        cfg.d_i = d_i;
        cfg.domain = spec.clone();
        cfg.n_total = None;
        cfg.s0 = Some(s0);
        cfg.i0 = Some(i0);
        let scen =
            Scenario { cfg, grid, coef: Coefficients { beta, gamma, risk }, n_total, s0, i0 };
        let ee = solve_ee(&EeProblem::from_scenario(&scen)).unwrap();
        let rx = relax_to_steady(&scen, 1e-9, 5000.0).unwrap();
        let gap = dist_fields(&ee.s, &rx.s).max(dist_fields(&ee.i, &rx.i));
        worst = worst.max(gap);
        let ok = ee.converged && rx.converged && gap <= 1e-5;
        checks.push((
            ok,
            format!("case {case}: p = {p}, q = {q}, d_S = {d_s:.3}, d_I = {d_i:.3}, gap = {gap:.2e}"),
        ));
    }
    checks.push((worst <= 1e-5, format!("worst direct-vs-relaxed gap {worst:.2e} <= 1e-5")));
    verdict(10, "direct and relaxation solvers agree", checks);
}
