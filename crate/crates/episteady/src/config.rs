//! Scenario configuration: a line-oriented `key = value` format with
//! `[sections]`, strict about unknown keys, plus the compiled [`Scenario`]
//! bundle (grid + coefficients + resolved population) used by every solver.

use crate::error::{Result, SimError};
use crate::fields::{CoefficientForm, Coefficients};
use crate::grid::{DomainSpec, Field, Grid};
use crate::output::fmt_g17;

/// Solver tolerances and iteration limits.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Residual tolerance of the inner semilinear Newton solves.
    pub tol_inner: f64,
    /// Relative tolerance of the outer kappa root-find.
    pub tol_outer: f64,
    /// Steady-state residual tolerance for time relaxation.
    pub tol_resid: f64,
    /// Iteration cap shared by Newton loops and eigensolver restarts.
    pub max_iters: usize,
    /// Seed for randomized diagnostics (reproducibility knob; the direct
    /// solvers are deterministic regardless).
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            tol_inner: 1e-12,
            tol_outer: 1e-12,
            tol_resid: 1e-8,
            max_iters: 60,
            seed: 0,
        }
    }
}

/// Time-integration parameters for the `simulate` command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub t_end: f64,
    /// Time step; 0 means "choose from the stability heuristic".
    pub dt: f64,
    /// Times at which field snapshots are written.
    pub snapshots: Vec<f64>,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams { t_end: 200.0, dt: 0.0, snapshots: Vec::new() }
    }
}

/// Parameters for the sweep commands.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepParams {
    /// Diffusivity values, largest first.
    pub values: Vec<f64>,
    /// Fixed ratio sigma = d_I / d_S for joint sweeps.
    pub sigma: Option<f64>,
    /// Dilation radius for the concentration metric (default: 3 grid spacings).
    pub delta: Option<f64>,
}

/// Parameters for the logistic-patch commands.
#[derive(Debug, Clone, PartialEq)]
pub struct KppParams {
    pub a: f64,
    pub b: f64,
}

/// Patch geometry for the concentration-limit problem.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchParams {
    /// Axis-aligned rectangles [x0, x1, y0, y1]; a node belongs to the patch
    /// when its center lies inside any of them.
    pub rects: Vec<[f64; 4]>,
    /// Use the coefficient risk mask as the patch set instead of rectangles.
    pub use_risk_set: bool,
    /// Mass to distribute; defaults to N - |Omega| r_min^{1/q}.
    pub mass_target: Option<f64>,
}

/// Full scenario description, parsed from a config file or a preset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Incidence exponent on I, 0 < p <= 1.
    pub p: f64,
    /// Incidence exponent on S, q > 0.
    pub q: f64,
    pub d_s: f64,
    pub d_i: f64,
    /// Total population; exactly one of `n_total` or (`s0`, `i0`) is given.
    pub n_total: Option<f64>,
    /// Constant initial susceptible density.
    pub s0: Option<f64>,
    /// Constant initial infected density.
    pub i0: Option<f64>,
    /// Override for the risk-set tolerance.
    pub risk_tol: Option<f64>,
    pub domain: DomainSpec,
    pub beta: CoefficientForm,
    pub gamma: CoefficientForm,
    pub solver: SolverParams,
    pub run: RunParams,
    pub sweep: SweepParams,
    pub kpp: Option<KppParams>,
    pub patch: PatchParams,
}

impl ScenarioConfig {
    /// Smooth two-bump transmission over the unit disk; p = 1, q = 0.5,
    /// uniform initial data S = 0.8, I = 0.2.
    pub fn preset_sim1() -> ScenarioConfig {
        ScenarioConfig {
            p: 1.0,
            q: 0.5,
            d_s: 1.0,
            d_i: 1e-3,
            n_total: None,
            s0: Some(0.8),
            i0: Some(0.2),
            risk_tol: None,
            domain: DomainSpec::Disk { radius: 1.0, n: 65 },
            beta: CoefficientForm::Sim1Beta,
            gamma: CoefficientForm::Sim1Gamma,
            solver: SolverParams::default(),
            run: RunParams { t_end: 200.0, dt: 0.0, snapshots: Vec::new() },
            sweep: SweepParams {
                values: vec![1e-2, 1e-3, 1e-4, 1e-5],
                sigma: Some(1.0),
                delta: Some(0.15),
            },
            kpp: None,
            patch: PatchParams::default(),
        }
    }

    /// Piecewise recovery profile whose lowest-risk set has four components
    /// (square, two segments, isolated point); resolution 72 puts that set
    /// exactly on grid nodes.
    pub fn preset_sim2() -> ScenarioConfig {
        ScenarioConfig {
            p: 1.0,
            q: 0.5,
            d_s: 1e-5,
            d_i: 1.0,
            n_total: None,
            s0: Some(0.8),
            i0: Some(0.2),
            risk_tol: None,
            domain: DomainSpec::Disk { radius: 1.0, n: 72 },
            beta: CoefficientForm::Sim2Beta,
            gamma: CoefficientForm::Sim2Gamma,
            solver: SolverParams::default(),
            run: RunParams { t_end: 800.0, dt: 0.0, snapshots: Vec::new() },
            sweep: SweepParams {
                values: vec![1e-2, 1e-3, 1e-4, 1e-5],
                sigma: Some(1.0),
                delta: Some(0.15),
            },
            kpp: None,
            patch: PatchParams { rects: Vec::new(), use_risk_set: true, mass_target: None },
        }
    }

    pub fn preset(name: &str) -> Result<ScenarioConfig> {
        match name {
            "sim1" => Ok(Self::preset_sim1()),
            "sim2" => Ok(Self::preset_sim2()),
            other => Err(SimError::config(format!(
                "unknown preset '{other}' (available: sim1, sim2)"
            ))),
        }
    }

    /// Sanity-check parameter ranges; called after parsing and before solving.
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(SimError::config(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if !(self.q > 0.0) {
            return Err(SimError::config(format!("q must be positive, got {}", self.q)));
        }
        if !(self.d_s > 0.0) || !(self.d_i > 0.0) {
            return Err(SimError::config(format!(
                "diffusivities must be positive, got d_S = {}, d_I = {}",
                self.d_s, self.d_i
            )));
        }
        match (self.n_total, self.s0, self.i0) {
            (Some(n), None, None) => {
                if !(n > 0.0) {
                    return Err(SimError::config(format!("N must be positive, got {n}")));
                }
            }
            (None, Some(s0), Some(i0)) => {
                if !(s0 >= 0.0 && i0 >= 0.0 && s0 + i0 > 0.0) {
                    return Err(SimError::config(format!(
                        "initial densities must be nonnegative with positive sum, got S0 = {s0}, I0 = {i0}"
                    )));
                }
            }
            (Some(_), _, _) => {
                return Err(SimError::config(
                    "give either N or both S0 and I0, not a mixture",
                ))
            }
            _ => {
                return Err(SimError::config(
                    "population unspecified: set N, or both S0 and I0",
                ))
            }
        }
        let s = &self.solver;
        if !(s.tol_inner > 0.0 && s.tol_outer > 0.0 && s.tol_resid > 0.0) {
            return Err(SimError::config("solver tolerances must be positive"));
        }
        if s.max_iters == 0 {
            return Err(SimError::config("solver max_iters must be at least 1"));
        }
        if self.run.t_end < 0.0 || self.run.dt < 0.0 {
            return Err(SimError::config("run times must be nonnegative"));
        }
        for &v in &self.sweep.values {
            if !(v > 0.0) {
                return Err(SimError::config(format!("sweep values must be positive, got {v}")));
            }
        }
        if let Some(sg) = self.sweep.sigma {
            if !(sg > 0.0) {
                return Err(SimError::config(format!("sweep sigma must be positive, got {sg}")));
            }
        }
        if let Some(d) = self.sweep.delta {
            if !(d > 0.0) {
                return Err(SimError::config(format!("sweep delta must be positive, got {d}")));
            }
        }
        if let Some(k) = &self.kpp {
            if !(k.b > 0.0) {
                return Err(SimError::config(format!("kpp b must be positive, got {}", k.b)));
            }
            if !(k.a >= 0.0) {
                return Err(SimError::config(format!("kpp a must be nonnegative, got {}", k.a)));
            }
        }
        for r in &self.patch.rects {
            if !(r[0] < r[1]) || !(r[2] < r[3]) {
                return Err(SimError::config(format!(
                    "patch rect must satisfy x0 < x1 and y0 < y1, got {r:?}"
                )));
            }
        }
        Ok(())
    }

    /// Render back to the config text format; `parse_config` of the result
    /// reproduces this value exactly.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("[model]\n");
        out.push_str(&format!("p = {}\n", fmt_g17(self.p)));
        out.push_str(&format!("q = {}\n", fmt_g17(self.q)));
        out.push_str(&format!("d_S = {}\n", fmt_g17(self.d_s)));
        out.push_str(&format!("d_I = {}\n", fmt_g17(self.d_i)));
        if let Some(n) = self.n_total {
            out.push_str(&format!("N = {}\n", fmt_g17(n)));
        }
        if let Some(s0) = self.s0 {
            out.push_str(&format!("S0 = {}\n", fmt_g17(s0)));
        }
        if let Some(i0) = self.i0 {
            out.push_str(&format!("I0 = {}\n", fmt_g17(i0)));
        }
        if let Some(t) = self.risk_tol {
            out.push_str(&format!("risk_tol = {}\n", fmt_g17(t)));
        }
        out.push_str("\n[domain]\n");
        match &self.domain {
            DomainSpec::Interval { length, n } => {
                out.push_str("kind = interval\n");
                out.push_str(&format!("length = {}\n", fmt_g17(*length)));
                out.push_str(&format!("resolution = {n}\n"));
            }
            DomainSpec::Rectangle { lx, ly, nx, ny } => {
                out.push_str("kind = rectangle\n");
                out.push_str(&format!("lx = {}\n", fmt_g17(*lx)));
                out.push_str(&format!("ly = {}\n", fmt_g17(*ly)));
                out.push_str(&format!("resolution = {nx} {ny}\n"));
            }
            DomainSpec::Disk { radius, n } => {
                out.push_str("kind = disk\n");
                out.push_str(&format!("radius = {}\n", fmt_g17(*radius)));
                out.push_str(&format!("resolution = {n}\n"));
            }
        }
        let coef = |form: &CoefficientForm, name: &str, out: &mut String| {
            out.push_str(&format!("\n[{name}]\n"));
            match form {
                CoefficientForm::Constant(v) => {
                    out.push_str("form = constant\n");
                    out.push_str(&format!("value = {}\n", fmt_g17(*v)));
                }
                CoefficientForm::Sim1Beta => out.push_str("form = sim1_beta\n"),
                CoefficientForm::Sim1Gamma => out.push_str("form = sim1_gamma\n"),
                CoefficientForm::Sim2Beta => out.push_str("form = sim2_beta\n"),
                CoefficientForm::Sim2Gamma => out.push_str("form = sim2_gamma\n"),
                CoefficientForm::Table(p) => {
                    out.push_str("form = table\n");
                    out.push_str(&format!("file = {p}\n"));
                }
            }
        };
        coef(&self.beta, "beta", &mut out);
        coef(&self.gamma, "gamma", &mut out);
        out.push_str("\n[solver]\n");
        out.push_str(&format!("tol_inner = {}\n", fmt_g17(self.solver.tol_inner)));
        out.push_str(&format!("tol_outer = {}\n", fmt_g17(self.solver.tol_outer)));
        out.push_str(&format!("tol_resid = {}\n", fmt_g17(self.solver.tol_resid)));
        out.push_str(&format!("max_iters = {}\n", self.solver.max_iters));
        out.push_str(&format!("seed = {}\n", self.solver.seed));
        out.push_str("\n[run]\n");
        out.push_str(&format!("t_end = {}\n", fmt_g17(self.run.t_end)));
        out.push_str(&format!("dt = {}\n", fmt_g17(self.run.dt)));
        if !self.run.snapshots.is_empty() {
            let list: Vec<String> = self.run.snapshots.iter().map(|&t| fmt_g17(t)).collect();
            out.push_str(&format!("snapshots = {}\n", list.join(" ")));
        }
        out.push_str("\n[sweep]\n");
        if !self.sweep.values.is_empty() {
            let list: Vec<String> = self.sweep.values.iter().map(|&v| fmt_g17(v)).collect();
            out.push_str(&format!("values = {}\n", list.join(" ")));
        }
        if let Some(sg) = self.sweep.sigma {
            out.push_str(&format!("sigma = {}\n", fmt_g17(sg)));
        }
        if let Some(d) = self.sweep.delta {
            out.push_str(&format!("delta = {}\n", fmt_g17(d)));
        }
        if let Some(k) = &self.kpp {
            out.push_str("\n[kpp]\n");
            out.push_str(&format!("a = {}\n", fmt_g17(k.a)));
            out.push_str(&format!("b = {}\n", fmt_g17(k.b)));
        }
        let p = &self.patch;
        if !p.rects.is_empty() || p.use_risk_set || p.mass_target.is_some() {
            out.push_str("\n[patch]\n");
            if !p.rects.is_empty() {
                let rects: Vec<String> = p
                    .rects
                    .iter()
                    .map(|r| {
                        format!(
                            "{} {} {} {}",
                            fmt_g17(r[0]),
                            fmt_g17(r[1]),
                            fmt_g17(r[2]),
                            fmt_g17(r[3])
                        )
                    })
                    .collect();
                out.push_str(&format!("rects = {}\n", rects.join(" ; ")));
            }
            if p.use_risk_set {
                out.push_str("use_risk_set = true\n");
            }
            if let Some(m) = p.mass_target {
                out.push_str(&format!("mass_target = {}\n", fmt_g17(m)));
            }
        }
        out
    }
}

/// Parse the config text format. Unknown sections or keys are rejected with
/// the offending line number; values are validated afterwards via
/// [`ScenarioConfig::validate`].
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    // Raw accumulators; assembled and validated at the end.
    let mut p = None;
    let mut q = None;
    let mut d_s = None;
    let mut d_i = None;
    let mut n_total = None;
    let mut s0 = None;
    let mut i0 = None;
    let mut risk_tol = None;
    let mut dom_kind: Option<String> = None;
    let mut dom_length = None;
    let mut dom_lx = None;
    let mut dom_ly = None;
    let mut dom_radius = None;
    let mut dom_res: Option<Vec<usize>> = None;
    let mut beta_form: Option<String> = None;
    let mut beta_value = None;
    let mut beta_file = None;
    let mut gamma_form: Option<String> = None;
    let mut gamma_value = None;
    let mut gamma_file = None;
    let mut solver = SolverParams::default();
    let mut run = RunParams::default();
    let mut sweep = SweepParams::default();
    let mut kpp_a = None;
    let mut kpp_b = None;
    let mut patch = PatchParams::default();

    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        // Everything from the first '#' is a comment, inline or whole-line.
        let line = match raw.find('#') {
            Some(pos) => raw[..pos].trim(),
            None => raw.trim(),
        };
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(SimError::config(format!("line {lineno}: malformed section '{line}'")));
            }
            let name = line[1..line.len() - 1].trim().to_string();
            match name.as_str() {
                "model" | "domain" | "beta" | "gamma" | "solver" | "run" | "sweep" | "kpp"
                | "patch" => section = name,
                other => {
                    return Err(SimError::config(format!(
                        "line {lineno}: unknown section [{other}]"
                    )))
                }
            }
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(SimError::config(format!(
                "line {lineno}: expected 'key = value', got '{line}'"
            )));
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        let fnum = |v: &str, key: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| {
                SimError::config(format!("line {lineno}: cannot parse {key} value '{v}' as a number"))
            })
        };
        let unum = |v: &str, key: &str| -> Result<usize> {
            v.parse::<usize>().map_err(|_| {
                SimError::config(format!(
                    "line {lineno}: cannot parse {key} value '{v}' as a nonnegative integer"
                ))
            })
        };
        let flist = |v: &str, key: &str| -> Result<Vec<f64>> {
            v.split_whitespace()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        SimError::config(format!(
                            "line {lineno}: cannot parse {key} entry '{s}' as a number"
                        ))
                    })
                })
                .collect()
        };
        match (section.as_str(), key) {
            ("model", "p") => p = Some(fnum(value, key)?),
            ("model", "q") => q = Some(fnum(value, key)?),
            ("model", "d_S") => d_s = Some(fnum(value, key)?),
            ("model", "d_I") => d_i = Some(fnum(value, key)?),
            ("model", "N") => n_total = Some(fnum(value, key)?),
            ("model", "S0") => s0 = Some(fnum(value, key)?),
            ("model", "I0") => i0 = Some(fnum(value, key)?),
            ("model", "risk_tol") => risk_tol = Some(fnum(value, key)?),
            ("domain", "kind") => dom_kind = Some(value.to_string()),
            ("domain", "length") => dom_length = Some(fnum(value, key)?),
            ("domain", "lx") => dom_lx = Some(fnum(value, key)?),
            ("domain", "ly") => dom_ly = Some(fnum(value, key)?),
            ("domain", "radius") => dom_radius = Some(fnum(value, key)?),
            ("domain", "resolution") => {
                let parts: Result<Vec<usize>> =
                    value.split_whitespace().map(|s| unum(s, key)).collect();
                dom_res = Some(parts?);
            }
            ("beta", "form") => beta_form = Some(value.to_string()),
            ("beta", "value") => beta_value = Some(fnum(value, key)?),
            ("beta", "file") => beta_file = Some(value.to_string()),
            ("gamma", "form") => gamma_form = Some(value.to_string()),
            ("gamma", "value") => gamma_value = Some(fnum(value, key)?),
            ("gamma", "file") => gamma_file = Some(value.to_string()),
            ("solver", "tol_inner") => solver.tol_inner = fnum(value, key)?,
            ("solver", "tol_outer") => solver.tol_outer = fnum(value, key)?,
            ("solver", "tol_resid") => solver.tol_resid = fnum(value, key)?,
            ("solver", "max_iters") => solver.max_iters = unum(value, key)?,
            ("solver", "seed") => {
                solver.seed = value.parse::<u64>().map_err(|_| {
                    SimError::config(format!("line {lineno}: cannot parse seed '{value}'"))
                })?
            }
            ("run", "t_end") => run.t_end = fnum(value, key)?,
            ("run", "dt") => run.dt = fnum(value, key)?,
            ("run", "snapshots") => run.snapshots = flist(value, key)?,
            ("sweep", "values") => sweep.values = flist(value, key)?,
            ("sweep", "sigma") => sweep.sigma = Some(fnum(value, key)?),
            ("sweep", "delta") => sweep.delta = Some(fnum(value, key)?),
            ("kpp", "a") => kpp_a = Some(fnum(value, key)?),
            ("kpp", "b") => kpp_b = Some(fnum(value, key)?),
            ("patch", "rects") => {
                let mut rects = Vec::new();
                for chunk in value.split(';') {
                    let nums = flist(chunk, key)?;
                    if nums.len() != 4 {
                        return Err(SimError::config(format!(
                            "line {lineno}: each patch rect needs 4 numbers (x0 x1 y0 y1), got {}",
                            nums.len()
                        )));
                    }
                    rects.push([nums[0], nums[1], nums[2], nums[3]]);
                }
                patch.rects = rects;
            }
            ("patch", "use_risk_set") => {
                patch.use_risk_set = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(SimError::config(format!(
                            "line {lineno}: use_risk_set must be true or false, got '{other}'"
                        )))
                    }
                }
            }
            ("patch", "mass_target") => patch.mass_target = Some(fnum(value, key)?),
            ("", k) => {
                return Err(SimError::config(format!(
                    "line {lineno}: key '{k}' appears before any [section]"
                )))
            }
            (s, k) => {
                return Err(SimError::config(format!(
                    "line {lineno}: unknown key '{k}' in section [{s}]"
                )))
            }
        }
    }

    let require = |opt: Option<f64>, what: &str| -> Result<f64> {
        opt.ok_or_else(|| SimError::config(format!("missing required key {what}")))
    };
    let domain = match dom_kind.as_deref() {
        Some("interval") => {
            let res = dom_res.unwrap_or_else(|| vec![65]);
            if res.len() != 1 {
                return Err(SimError::config("interval resolution takes one integer"));
            }
            DomainSpec::Interval { length: dom_length.unwrap_or(1.0), n: res[0] }
        }
        Some("rectangle") => {
            let res = dom_res.unwrap_or_else(|| vec![33, 33]);
            let (nx, ny) = match res.as_slice() {
                [n] => (*n, *n),
                [nx, ny] => (*nx, *ny),
                _ => {
                    return Err(SimError::config(
                        "rectangle resolution takes one or two integers",
                    ))
                }
            };
            DomainSpec::Rectangle {
                lx: dom_lx.unwrap_or(1.0),
                ly: dom_ly.unwrap_or(1.0),
                nx,
                ny,
            }
        }
        Some("disk") => {
            let res = dom_res.unwrap_or_else(|| vec![65]);
            if res.len() != 1 {
                return Err(SimError::config("disk resolution takes one integer"));
            }
            DomainSpec::Disk { radius: dom_radius.unwrap_or(1.0), n: res[0] }
        }
        Some(other) => {
            return Err(SimError::config(format!(
                "unknown domain kind '{other}' (interval, rectangle, disk)"
            )))
        }
        None => return Err(SimError::config("missing required key [domain] kind")),
    };
    let coef = |form: Option<String>,
                value: Option<f64>,
                file: Option<String>,
                name: &str|
     -> Result<CoefficientForm> {
        match form.as_deref() {
            Some("constant") => Ok(CoefficientForm::Constant(value.ok_or_else(|| {
                SimError::config(format!("[{name}] form = constant requires 'value'"))
            })?)),
            Some("sim1_beta") => Ok(CoefficientForm::Sim1Beta),
            Some("sim1_gamma") => Ok(CoefficientForm::Sim1Gamma),
            Some("sim2_beta") => Ok(CoefficientForm::Sim2Beta),
            Some("sim2_gamma") => Ok(CoefficientForm::Sim2Gamma),
            Some("table") => Ok(CoefficientForm::Table(file.ok_or_else(|| {
                SimError::config(format!("[{name}] form = table requires 'file'"))
            })?)),
            Some(other) => Err(SimError::config(format!(
                "[{name}] unknown form '{other}' (constant, sim1_beta, sim1_gamma, sim2_beta, sim2_gamma, table)"
            ))),
            None => Err(SimError::config(format!("missing required key [{name}] form"))),
        }
    };
    let cfg = ScenarioConfig {
        p: require(p, "[model] p")?,
        q: require(q, "[model] q")?,
        d_s: require(d_s, "[model] d_S")?,
        d_i: require(d_i, "[model] d_I")?,
        n_total,
        s0,
        i0,
        risk_tol,
        domain,
        beta: coef(beta_form, beta_value, beta_file, "beta")?,
        gamma: coef(gamma_form, gamma_value, gamma_file, "gamma")?,
        solver,
        run,
        sweep,
        kpp: match (kpp_a, kpp_b) {
            (None, None) => None,
            (a, b) => Some(KppParams { a: a.unwrap_or(0.0), b: b.unwrap_or(1.0) }),
        },
        patch,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// A compiled scenario: grid and coefficient fields built once, with the
/// population constraint resolved to concrete numbers.
#[derive(Debug)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub grid: Grid,
    pub coef: Coefficients,
    /// Total population, always equal to the grid quadrature of S0 + I0.
    pub n_total: f64,
    /// Constant initial susceptible density.
    pub s0: f64,
    /// Constant initial infected density.
    pub i0: f64,
}

impl Scenario {
    pub fn build(cfg: ScenarioConfig) -> Result<Scenario> {
        cfg.validate()?;
        let grid = Grid::build(&cfg.domain)?;
        let omega = grid.measure_h();
        let (s0, i0) = match (cfg.n_total, cfg.s0, cfg.i0) {
            (Some(n), None, None) => (0.8 * n / omega, 0.2 * n / omega),
            (None, Some(s0), Some(i0)) => (s0, i0),
            _ => unreachable!("validate() enforces the population spec"),
        };
        // The authoritative N is the quadrature of the actual initial data, so
        // mass bookkeeping is exact on the grid.
        let n_total = grid.integrate(&vec![s0 + i0; grid.n_nodes()]);
        let coef = Coefficients::build(&grid, &cfg.beta, &cfg.gamma, n_total, cfg.risk_tol)?;
        Ok(Scenario { cfg, grid, coef, n_total, s0, i0 })
    }

    /// Grid quadrature measure |Omega| used in all algebraic identities.
    pub fn omega(&self) -> f64 {
        self.grid.measure_h()
    }

    /// r^{1/q} field.
    pub fn r_pow_inv_q(&self) -> Field {
        self.coef.risk.r_pow(&self.grid, 1.0 / self.cfg.q)
    }

    /// Quadrature of r^{1/q}: decides the large-N / small-N regime split.
    pub fn int_r_pow(&self) -> f64 {
        self.grid.integrate(&self.r_pow_inv_q().values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["sim1", "sim2"] {
            let cfg = ScenarioConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.serialize();
            let back = parse_config(&text).unwrap();
            assert_eq!(back, cfg, "round trip failed for {name}");
        }
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let mut text = ScenarioConfig::preset_sim1().serialize();
        text.push_str("\n[model]\nbogus = 1\n");
        let err = parse_config(&text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn unknown_section_rejected() {
        let err = parse_config("[nonsense]\nx = 1\n").unwrap_err();
        assert!(format!("{err}").contains("nonsense"));
    }

    #[test]
    fn missing_required_key_named() {
        let err = parse_config("[model]\np = 1\n").unwrap_err();
        assert!(format!("{err}").contains("q"), "{err}");
    }

    #[test]
    fn population_mixture_rejected() {
        let mut cfg = ScenarioConfig::preset_sim1();
        cfg.n_total = Some(3.0); // together with S0/I0 from the preset
        assert!(cfg.validate().is_err());
        cfg.s0 = None;
        cfg.i0 = None;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn out_of_range_exponents_rejected() {
        let mut cfg = ScenarioConfig::preset_sim1();
        cfg.p = 1.5;
        assert!(cfg.validate().is_err());
        cfg.p = 1.0;
        cfg.q = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scenario_population_split() {
        let mut cfg = ScenarioConfig::preset_sim1();
        cfg.domain = DomainSpec::Disk { radius: 1.0, n: 21 };
        cfg.s0 = None;
        cfg.i0 = None;
        cfg.n_total = Some(2.0);
        let scen = Scenario::build(cfg).unwrap();
        assert!((scen.n_total - 2.0).abs() < 1e-12);
        assert!((scen.s0 / scen.i0 - 4.0).abs() < 1e-12);
        // Quadrature identity: N == integrate(S0 + I0).
        let total =
            scen.grid.integrate(&vec![scen.s0 + scen.i0; scen.grid.n_nodes()]);
        assert_eq!(total, scen.n_total);
    }

    #[test]
    fn inline_comments_stripped() {
        let text = "[model]\np = 1.0 # linear incidence\nq = 0.5\nd_S = 1.0\nd_I = 1e-3\n\
                    N = 2.0\n[domain]\nkind = interval # a segment\nlength = 1.0\nresolution = 17\n\
                    [beta]\nform = constant\nvalue = 2.0\n[gamma]\nform = constant\nvalue = 1.0\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.p, 1.0);
        assert_eq!(cfg.domain, DomainSpec::Interval { length: 1.0, n: 17 });
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = format!("# leading comment\n\n{}", ScenarioConfig::preset_sim2().serialize());
        assert!(parse_config(&text).is_ok());
    }
}
