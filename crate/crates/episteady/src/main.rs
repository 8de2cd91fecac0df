//! Command-line driver: load a scenario (preset or config file), run one of
//! the solvers, and write deterministic CSV / PGM / metadata files under
//! `--out`. Exit codes: 0 success, 1 configuration or usage problems,
//! 2 numerical failure, 3 no endemic equilibrium.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use episteady::config::{parse_config, Scenario, ScenarioConfig};
use episteady::equilibrium::{solve_ee, verify_bounds, EeProblem};
use episteady::error::{Result, SimError};
use episteady::evolve;
use episteady::limits::{self, LimitInput, LimitProfile};
use episteady::output::{fmt_g17, write_heatmap, write_meta, write_node_csv, write_text};
use episteady::spectra::{
    connected_components, scenario_r0, solve_fisher_kpp, solve_limit_patches, Patch,
};
use episteady::study::{self, StudyReport};

#[derive(Parser, Debug)]
#[command(
    name = "episteady",
    about = "Steady states, reproduction numbers, and small-diffusion limits \
             of a spatial SIS model with incidence beta(x) S^q I^p"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug)]
struct Common {
    /// Scenario config file (line-oriented key = value with [sections]).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Built-in scenario preset.
    #[arg(long, value_name = "NAME", value_parser = ["sim1", "sim2"])]
    preset: Option<String>,

    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// March the initial data in time and write field snapshots.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Endemic equilibrium via the constant-combination reduction.
    Steady {
        #[command(flatten)]
        common: Common,
    },
    /// Basic reproduction number (linear incidence only).
    R0 {
        #[command(flatten)]
        common: Common,
    },
    /// Small-diffusion limit profiles available for the scenario.
    Limits {
        #[command(flatten)]
        common: Common,
    },
    /// Convergence sweep of the infected diffusion rate d_I.
    SweepDi {
        #[command(flatten)]
        common: Common,
        /// Worker threads for sweep rows.
        #[arg(long, value_name = "K", default_value_t = 1)]
        jobs: usize,
    },
    /// Convergence sweep of the susceptible diffusion rate d_S.
    SweepDs {
        #[command(flatten)]
        common: Common,
        /// Worker threads for sweep rows.
        #[arg(long, value_name = "K", default_value_t = 1)]
        jobs: usize,
    },
    /// Joint sweep of both rates at the fixed ratio sigma = d_I / d_S.
    SweepJoint {
        #[command(flatten)]
        common: Common,
        /// Worker threads for sweep rows.
        #[arg(long, value_name = "K", default_value_t = 1)]
        jobs: usize,
    },
    /// Logistic subdomain problem with absorbing boundary.
    Kpp {
        #[command(flatten)]
        common: Common,
    },
    /// Distribute an infected mass across highest-risk patches.
    Patch {
        #[command(flatten)]
        common: Common,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successes; everything else is usage.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => cmd_simulate(&common),
        Command::Steady { common } => cmd_steady(&common),
        Command::R0 { common } => cmd_r0(&common),
        Command::Limits { common } => cmd_limits(&common),
        Command::SweepDi { common, jobs } => cmd_sweep(&common, jobs, Sweep::Di),
        Command::SweepDs { common, jobs } => cmd_sweep(&common, jobs, Sweep::Ds),
        Command::SweepJoint { common, jobs } => cmd_sweep(&common, jobs, Sweep::Joint),
        Command::Kpp { common } => cmd_kpp(&common),
        Command::Patch { common } => cmd_patch(&common),
    }
}

/// Resolve --config / --preset into a compiled scenario and echo the config
/// into the output directory so every run is reproducible from its artifacts.
fn load_scenario(common: &Common) -> Result<Scenario> {
    let cfg = match (&common.config, &common.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| SimError::io(path.display().to_string(), e))?;
            parse_config(&text)?
        }
        (None, Some(name)) => ScenarioConfig::preset(name)?,
        (Some(_), Some(_)) => {
            return Err(SimError::config("give --config or --preset, not both"))
        }
        (None, None) => {
            return Err(SimError::config(
                "a scenario is required: pass --config FILE or --preset sim1|sim2",
            ))
        }
    };
    let scen = Scenario::build(cfg)?;
    write_text(&common.out.join("config.txt"), &scen.cfg.serialize())?;
    Ok(scen)
}

fn scenario_meta(scen: &Scenario) -> Vec<(&'static str, String)> {
    vec![
        ("nodes", scen.grid.n_nodes().to_string()),
        ("omega", fmt_g17(scen.omega())),
        ("n_total", fmt_g17(scen.n_total)),
        ("p", fmt_g17(scen.cfg.p)),
        ("q", fmt_g17(scen.cfg.q)),
        ("d_S", fmt_g17(scen.cfg.d_s)),
        ("d_I", fmt_g17(scen.cfg.d_i)),
    ]
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let scen = load_scenario(common)?;
    let run = &scen.cfg.run;
    let snapshots = evolve::run_to_time(&scen, run.t_end, run.dt, &run.snapshots)?;
    let mut meta = scenario_meta(&scen);
    meta.push(("command", "simulate".into()));
    meta.push(("t_end", fmt_g17(run.t_end)));
    meta.push(("snapshots", snapshots.len().to_string()));
    let mut names = Vec::new();
    for (k, state) in snapshots.iter().enumerate() {
        let stem = format!("snapshot_{k:03}");
        write_node_csv(
            &common.out.join(format!("{stem}.csv")),
            &scen.grid,
            &[("S", &state.s.values), ("I", &state.i.values)],
        )?;
        write_heatmap(&common.out.join(format!("{stem}_S.pgm")), &scen.grid, &state.s.values)?;
        write_heatmap(&common.out.join(format!("{stem}_I.pgm")), &scen.grid, &state.i.values)?;
        names.push((format!("{stem}_t"), fmt_g17(state.t)));
        names.push((format!("{stem}_mass"), fmt_g17(state.mass(&scen))));
    }
    let named: Vec<(&str, String)> =
        meta.iter().map(|(k, v)| (*k, v.clone())).chain(
            names.iter().map(|(k, v)| (k.as_str(), v.clone())),
        ).collect();
    write_meta(&common.out.join("meta.txt"), &named)?;
    let last = snapshots.last().expect("run_to_time returns at least one snapshot");
    println!(
        "simulate: t = {}, mass = {} (target {}), {} snapshot(s) -> {}",
        fmt_g17(last.t),
        fmt_g17(last.mass(&scen)),
        fmt_g17(scen.n_total),
        snapshots.len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_steady(common: &Common) -> Result<()> {
    let scen = load_scenario(common)?;
    let prob = EeProblem::from_scenario(&scen);
    let state = solve_ee(&prob)?;
    let bounds = verify_bounds(&prob, &state)?;
    write_node_csv(
        &common.out.join("equilibrium.csv"),
        &scen.grid,
        &[("S", &state.s.values), ("I", &state.i.values)],
    )?;
    write_heatmap(&common.out.join("S.pgm"), &scen.grid, &state.s.values)?;
    write_heatmap(&common.out.join("I.pgm"), &scen.grid, &state.i.values)?;
    let mut meta = scenario_meta(&scen);
    meta.push(("command", "steady".into()));
    meta.push(("kappa", fmt_g17(state.kappa)));
    meta.push(("pde_residual", fmt_g17(state.pde_residual)));
    meta.push(("kappa_constancy", fmt_g17(state.kappa_constancy)));
    meta.push(("mass_error", fmt_g17(state.mass_error)));
    meta.push(("outer_iterations", state.outer_iterations.to_string()));
    meta.push(("inner_iterations", state.inner_iterations.to_string()));
    meta.push(("converged", state.converged.to_string()));
    meta.push(("bounds_all_ok", bounds.all_ok.to_string()));
    let bound_lines: Vec<(String, String)> = bounds
        .checks
        .iter()
        .map(|c| {
            (
                format!("bound[{}]", c.name.replace(' ', "_")),
                format!("{} (lhs = {}, rhs = {}, slack = {})", c.ok, fmt_g17(c.lhs), fmt_g17(c.rhs), fmt_g17(c.slack)),
            )
        })
        .collect();
    let named: Vec<(&str, String)> = meta
        .iter()
        .map(|(k, v)| (*k, v.clone()))
        .chain(bound_lines.iter().map(|(k, v)| (k.as_str(), v.clone())))
        .collect();
    write_meta(&common.out.join("meta.txt"), &named)?;
    println!(
        "steady: kappa = {}, residual = {}, mass error = {}, converged = {} -> {}",
        fmt_g17(state.kappa),
        fmt_g17(state.pde_residual),
        fmt_g17(state.mass_error),
        state.converged,
        common.out.display()
    );
    Ok(())
}

fn cmd_r0(common: &Common) -> Result<()> {
    let scen = load_scenario(common)?;
    let r0 = scenario_r0(&scen, scen.cfg.d_i)?;
    write_node_csv(
        &common.out.join("eigenfunction.csv"),
        &scen.grid,
        &[("phi", &r0.eigenfunction.values)],
    )?;
    write_heatmap(&common.out.join("eigenfunction.pgm"), &scen.grid, &r0.eigenfunction.values)?;
    let mut meta = scenario_meta(&scen);
    meta.push(("command", "r0".into()));
    meta.push(("r0", fmt_g17(r0.value)));
    meta.push(("iterations", r0.iterations.to_string()));
    meta.push(("residual", fmt_g17(r0.residual)));
    write_meta(&common.out.join("meta.txt"), &meta)?;
    println!("R0 = {}", fmt_g17(r0.value));
    Ok(())
}

fn write_profile(out: &Path, stem: &str, scen: &Scenario, p: &LimitProfile) -> Result<()> {
    write_node_csv(
        &out.join(format!("{stem}.csv")),
        &scen.grid,
        &[("S", &p.s.values), ("I", &p.i.values)],
    )
}

fn profile_meta(stem: &str, p: &LimitProfile, meta: &mut Vec<(String, String)>) {
    meta.push((format!("{stem}_kind"), format!("{:?}", p.kind)));
    meta.push((format!("{stem}_scalar"), fmt_g17(p.scalar)));
    meta.push((format!("{stem}_scalar_residual"), fmt_g17(p.scalar_residual)));
    meta.push((format!("{stem}_infected_mass"), fmt_g17(p.infected_mass)));
}

fn cmd_limits(common: &Common) -> Result<()> {
    let scen = load_scenario(common)?;
    let input = LimitInput::from_scenario(&scen);
    let mut meta: Vec<(String, String)> =
        scenario_meta(&scen).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    meta.push(("command".into(), "limits".into()));
    let mut wrote = 0usize;
    let mut first_err: Option<SimError> = None;
    let mut note = |err: SimError, stem: &str, meta: &mut Vec<(String, String)>| {
        meta.push((format!("{stem}_unavailable"), err.to_string()));
        if first_err.is_none() {
            first_err = Some(err);
        }
    };

    match limits::small_di_profile(&input) {
        Ok(p) => {
            write_profile(&common.out, "limit_small_di", &scen, &p)?;
            profile_meta("limit_small_di", &p, &mut meta);
            wrote += 1;
        }
        Err(e) => note(e, "limit_small_di", &mut meta),
    }
    match limits::small_ds_profiles(&input) {
        Ok(ps) => {
            for (k, p) in ps.iter().enumerate() {
                let stem =
                    if k == 0 { "limit_small_ds".to_string() } else { format!("limit_small_ds_{k}") };
                write_profile(&common.out, &stem, &scen, p)?;
                profile_meta(&stem, p, &mut meta);
                wrote += 1;
            }
        }
        Err(e) => note(e, "limit_small_ds", &mut meta),
    }
    if let Some(sigma) = scen.cfg.sweep.sigma {
        meta.push(("sigma".into(), fmt_g17(sigma)));
        match limits::joint_profile(&input, sigma) {
            Ok(p) => {
                write_profile(&common.out, "limit_joint", &scen, &p)?;
                profile_meta("limit_joint", &p, &mut meta);
                wrote += 1;
            }
            Err(e) => note(e, "limit_joint", &mut meta),
        }
    }
    let named: Vec<(&str, String)> = meta.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    write_meta(&common.out.join("meta.txt"), &named)?;
    if wrote == 0 {
        return Err(first_err.expect("no profiles written implies at least one error"));
    }
    println!("limits: wrote {wrote} profile(s) -> {}", common.out.display());
    Ok(())
}

enum Sweep {
    Di,
    Ds,
    Joint,
}

fn cmd_sweep(common: &Common, jobs: usize, which: Sweep) -> Result<()> {
    let scen = load_scenario(common)?;
    let values = scen.cfg.sweep.values.clone();
    let (report, name): (StudyReport, &str) = match which {
        Sweep::Di => (study::sweep_di(&scen, &values, jobs)?, "sweep_di"),
        Sweep::Ds => (study::sweep_ds(&scen, &values, jobs)?, "sweep_ds"),
        Sweep::Joint => {
            let sigma = scen.cfg.sweep.sigma.ok_or_else(|| {
                SimError::config("the joint sweep needs [sweep] sigma (the fixed ratio d_I / d_S)")
            })?;
            (study::sweep_joint(&scen, sigma, &values, jobs)?, "sweep_joint")
        }
    };
    let csv = report.to_csv();
    write_text(&common.out.join(format!("{name}.csv")), &csv)?;
    let flagged = report.rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{name}: {} row(s), regime {:?}, {} flagged -> {}",
        report.rows.len(),
        report.regime,
        flagged,
        common.out.display()
    );
    Ok(())
}

/// The subdomain for the logistic command: the union of the configured
/// rectangles, the lowest-risk set, or (default) the whole domain — always
/// with absorbing outer boundary.
fn kpp_patch<'a>(scen: &'a Scenario) -> Result<Patch<'a>> {
    let p = &scen.cfg.patch;
    if p.use_risk_set && !p.rects.is_empty() {
        return Err(SimError::config("give [patch] rects or use_risk_set, not both"));
    }
    if p.use_risk_set {
        return Patch::from_mask(&scen.grid, &scen.coef.risk.risk_mask, false);
    }
    if !p.rects.is_empty() {
        let mask = rects_mask(scen, &p.rects);
        return Patch::from_mask(&scen.grid, &mask, false);
    }
    Ok(Patch::whole(&scen.grid, false))
}

fn rects_mask(scen: &Scenario, rects: &[[f64; 4]]) -> Vec<bool> {
    (0..scen.grid.n_nodes())
        .map(|k| {
            let (x, y) = scen.grid.coords(k);
            rects.iter().any(|r| x >= r[0] && x <= r[1] && y >= r[2] && y <= r[3])
        })
        .collect()
}

fn cmd_kpp(common: &Common) -> Result<()> {
    let scen = load_scenario(common)?;
    let kpp = scen.cfg.kpp.clone().ok_or_else(|| {
        SimError::config("the kpp command needs a [kpp] section with a and b")
    })?;
    let patch = kpp_patch(&scen)?;
    let result = solve_fisher_kpp(kpp.a, kpp.b, &patch, &scen.coef.beta)?;
    write_node_csv(&common.out.join("kpp_u.csv"), &scen.grid, &[("u", &result.u.values)])?;
    write_heatmap(&common.out.join("kpp_u.pgm"), &scen.grid, &result.u.values)?;
    let mut meta = scenario_meta(&scen);
    meta.push(("command", "kpp".into()));
    meta.push(("patch_nodes", patch.n_nodes().to_string()));
    meta.push(("a", fmt_g17(result.a)));
    meta.push(("b", fmt_g17(result.b)));
    meta.push(("a_low", fmt_g17(result.a_low)));
    meta.push(("positive", result.positive.to_string()));
    meta.push(("iterations", result.iterations.to_string()));
    meta.push(("residual", fmt_g17(result.residual)));
    write_meta(&common.out.join("meta.txt"), &meta)?;
    println!(
        "kpp: a_low = {}, positive = {}, max u = {} -> {}",
        fmt_g17(result.a_low),
        result.positive,
        fmt_g17(result.u.inf_norm()),
        common.out.display()
    );
    Ok(())
}

/// Patches for the mass-distribution command: one per configured rectangle,
/// or the connected components of the lowest-risk set. Outer faces keep the
/// domain's no-flux condition; faces exposed to the rest of the domain
/// absorb.
fn limit_patches<'a>(scen: &'a Scenario) -> Result<Vec<Patch<'a>>> {
    let p = &scen.cfg.patch;
    if p.use_risk_set && !p.rects.is_empty() {
        return Err(SimError::config("give [patch] rects or use_risk_set, not both"));
    }
    if p.use_risk_set {
        let comps = connected_components(&scen.grid, &scen.coef.risk.risk_mask);
        if comps.is_empty() {
            return Err(SimError::config("the lowest-risk set is empty; nothing to solve on"));
        }
        return comps
            .into_iter()
            .map(|nodes| Patch::from_nodes(&scen.grid, nodes, true))
            .collect();
    }
    if !p.rects.is_empty() {
        return p
            .rects
            .iter()
            .map(|r| {
                let mask = rects_mask(scen, std::slice::from_ref(r));
                Patch::from_mask(&scen.grid, &mask, true)
            })
            .collect();
    }
    Err(SimError::config(
        "the patch command needs [patch] rects or use_risk_set = true",
    ))
}

fn cmd_patch(common: &Common) -> Result<()> {
    let scen = load_scenario(common)?;
    let patches = limit_patches(&scen)?;
    // Damping scale: the configured kpp b when present, else d_I (the patch
    // profiles approximate the concentrating infecteds at that rate).
    let b = scen.cfg.kpp.as_ref().map(|k| k.b).unwrap_or(scen.cfg.d_i);
    let default_target =
        scen.n_total - scen.omega() * scen.coef.risk.r_min.powf(1.0 / scen.cfg.q);
    let target = scen.cfg.patch.mass_target.unwrap_or(default_target);
    let amp = solve_limit_patches(&patches, b, &scen.coef.beta, target)?;
    write_node_csv(&common.out.join("patch_i.csv"), &scen.grid, &[("I", &amp.i_hat.values)])?;
    write_heatmap(&common.out.join("patch_i.pgm"), &scen.grid, &amp.i_hat.values)?;
    let mut meta = scenario_meta(&scen);
    meta.push(("command", "patch".into()));
    meta.push(("b", fmt_g17(b)));
    meta.push(("mass_target", fmt_g17(target)));
    meta.push(("a_hat", fmt_g17(amp.a_hat)));
    meta.push(("iterations", amp.iterations.to_string()));
    meta.push(("residual", fmt_g17(amp.residual)));
    let per_patch: Vec<(String, String)> = amp
        .patch_masses
        .iter()
        .zip(&amp.thresholds)
        .enumerate()
        .map(|(j, (m, th))| {
            (format!("patch_{j}"), format!("mass = {}, threshold = {}", fmt_g17(*m), fmt_g17(*th)))
        })
        .collect();
    let named: Vec<(&str, String)> = meta
        .iter()
        .map(|(k, v)| (*k, v.clone()))
        .chain(per_patch.iter().map(|(k, v)| (k.as_str(), v.clone())))
        .collect();
    write_meta(&common.out.join("meta.txt"), &named)?;
    println!(
        "patch: a_hat = {} over {} patch(es), mass target {} -> {}",
        fmt_g17(amp.a_hat),
        patches.len(),
        fmt_g17(target),
        common.out.display()
    );
    Ok(())
}
